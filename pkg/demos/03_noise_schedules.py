"""Noise schedule comparison: how much signal each family keeps at each t,
and why the tan family makes the denoising task consistently harder."""

import numpy as np

from latentdiff.schedule import (NoiseSchedule, alpha, forward_sample,
                                 parse_schedule, schedule_report)

families = [parse_schedule(n) for n in ("cosine", "sqrt", "tan-7", "tan-9", "tan-13")]

print("sqrt(alpha_t) by schedule (signal kept):")
grid = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]
header = "   t   " + "".join(f"{s.name:>9}" for s in families)
print(header)
for t in grid:
    row = f"  {t:4.2f} " + "".join(f"{np.sqrt(alpha(t, s)):9.4f}" for s in families)
    print(row)

print("\ntan-9 at t=0.5 keeps alpha = 1/82 =", alpha(0.5, parse_schedule("tan-9")))

print("\nvariance preservation: Var(z_t) stays ~1 for unit z0 at any t")
rng = np.random.default_rng(0)
z0 = rng.standard_normal(50_000)
for t in (0.1, 0.5, 0.9):
    z_t = forward_sample(z0, t, rng.standard_normal(z0.shape), parse_schedule("tan-9"))
    print(f"  t={t}: Var(z_t) = {z_t.var():.4f}")

rows = schedule_report(parse_schedule("tan-9"), np.linspace(0, 1, 11))
print("\nschedule_report rows (t, sqrt_alpha, 1-alpha):")
for r in rows[:4]:
    print("  ", tuple(round(v, 4) for v in r))

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ts = np.linspace(0, 1, 200)
    for s in families:
        plt.plot(ts, np.sqrt(alpha(ts, s)), label=s.name)
    plt.xlabel("t")
    plt.ylabel("sqrt(alpha_t)")
    plt.legend()
    plt.title("signal kept by each noise schedule")
    plt.savefig("schedules.png", dpi=120)
    print("\nwrote schedules.png")
except ImportError:
    print("\nmatplotlib not available; skipped the plot")

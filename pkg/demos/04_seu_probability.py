"""How likely is at least one upset in a deployed model's weights?"""
# %%
from ssipp.seu import MONTH_NS, SeuExposure, seu_flip_probability

# 10 million binary32 parameters, one month, one test every ns
e = SeuExposure(n_params=1e7)
exact = seu_flip_probability(e)
approx = seu_flip_probability(e, "approximate")
print(f"{e.trials:.3g} bit-intervals")
print(f"exact       {exact.probability:.4f}")
print(f"approximate {approx.probability:.4f}  (warning: {approx.approximation_warning})")

# %% the linear approximation is only trustworthy while it stays small
for months in (1e-6, 1e-3, 0.01, 0.1, 1, 12):
    e = SeuExposure(1e7, lifetime=months * MONTH_NS)
    print(f"{months:>8g} months: exact {seu_flip_probability(e).probability:.4g}  "
          f"approx {seu_flip_probability(e, 'approximate').probability:.4g}")

# %% model size matters linearly until saturation
for n in (1e5, 1e6, 1e7, 1e8):
    print(f"{n:>8.0e} params: {seu_flip_probability(SeuExposure(n)).probability:.4f}")

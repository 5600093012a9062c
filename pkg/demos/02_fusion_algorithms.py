"""How the four fusion rules treat the same stream of noisy measurements.

One cell receives 40 messages of 5 points each. The true value is 1.0 for
the first 20 messages and 2.0 afterwards, with unit Gaussian noise. The
class stream reports class 0 for the first half and class 1 for the second.

Run:  python demos/02_fusion_algorithms.py
"""

import numpy as np

from mmelev.fusion import fuse_dirichlet, fuse_exponential, fuse_gaussian, fuse_latest

rng = np.random.default_rng(0)
latest = np.zeros(1)
ema, seen = np.zeros(1), np.zeros(1)
mean, var = np.zeros(1), np.zeros(1)
theta, alpha = np.zeros((2, 1)), np.zeros((2, 1))

print(" msg  truth   latest  exp(0.2)  gaussian (sd)      P(class 1)")
for k in range(40):
    truth = 1.0 if k < 20 else 2.0
    z = rng.normal(truth, 1.0, 5)
    count, sums = np.array([5]), np.array([z.sum()])
    fuse_latest(latest, count, sums)
    fuse_exponential(ema, count, sums, 0.2, seen=seen)
    fuse_gaussian(mean, var, count, sums, sigma_f2=1.0, mu0=0.0, sigma02=10.0)
    cls = 0 if k < 20 else 1
    probs = np.full((5, 2), 0.05)
    probs[:, cls] = 0.95
    fuse_dirichlet(theta, alpha, count, probs.sum(axis=0)[:, None], alpha0=1.0)
    if k % 4 == 3:
        print(f"{k + 1:4d}  {truth:5.1f}  {latest[0]:7.3f}  {ema[0]:8.3f}  {mean[0]:8.3f} ({np.sqrt(var[0]):.3f})"
              f"  {theta[1, 0]:10.3f}")

print("\nlatest follows the newest message; the exponential average forgets at rate 0.8 per message;")
print("the Gaussian posterior averages everything and grows ever more confident, so it lags after the step;")
print("the Dirichlet posterior needs as much contrary evidence as it has seen before it flips.")

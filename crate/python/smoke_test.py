"""Smoke test for the difflab Python extension.

Build the module first:

    cargo build -p difflab-python --features extension-module --release
    cp target/release/libdifflab_py.so python/difflab_py.so

then run ``python3 python/smoke_test.py`` from the repository root.
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import difflab_py as dl


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def main():
    s = dl.Schedule.linear(100, 1e-3, 0.2)
    check(s.steps == 100 and s.alpha_bar(0) == 1.0, "schedule basics")
    abar = s.alpha_bars()
    check(all(a > b for a, b in zip(abar, abar[1:])), "alpha_bar decreasing")
    check(math.isclose(abar[100], math.prod(1 - b for b in s.betas()), rel_tol=1e-12), "alpha_bar is a product")

    check(abs(dl.kl([1.0], [1.0], [0.0], [4.0]) - 0.443147) < 1e-6, "closed-form KL")
    est, se = dl.kl_mc([1.0], [1.0], [0.0], [4.0], 20000, 1)
    check(abs(est - 0.443147) < 4 * se, "Monte-Carlo KL")

    mean, var = dl.marginal([1.0], 50, s)
    check(math.isclose(mean[0], math.sqrt(abar[50])) and math.isclose(var[0], 1 - abar[50]), "marginal q(x_t|x_0)")
    xt, eps = dl.sample_xt([1.0], 50, s, 3)
    check(math.isclose(xt[0], math.sqrt(abar[50]) + math.sqrt(1 - abar[50]) * eps[0]), "reparameterised x_t")
    traj = dl.simulate_forward([1.0], s, 4)
    check(len(traj) == 101 and traj[0] == [1.0], "forward trajectory")

    g = dl.reparam_grad([1.0, 2.0], 100000, 5)
    check(abs(g[0] - 1.0) < 0.02 and abs(g[1] - 2.0) < 0.04, "reparameterisation gradient")

    data = dl.GaussianMixture.bimodal()
    ref = [x[0] for x in data.sample(2000, 6)]
    small = dl.Schedule.linear(20, 1e-2, 0.5)
    m = dl.NoisePredictor(1, 7, hidden=[16, 16])
    curve = m.train(small, 7, steps=300, batch=32)
    check(curve[0][0] == 0 and curve[-1][1] < curve[0][1], "training lowers the loss")
    xs = m.sample(small, 8, chains=300)
    check(len(xs) == 300 and all(math.isfinite(x[0]) for x in xs), "DDPM sampling")
    w1 = dl.wasserstein1([x[0] for x in xs], ref)
    check(math.isfinite(w1) and w1 >= 0, f"W1 to data = {w1:.3f}")
    det = m.sample(small, 9, chains=3, sampler="ddim", sigma="zero", x_t=[0.3])
    check(det[0] == det[1] == det[2], "DDIM with fixed x_T is deterministic")
    try:
        m.sample(small, 9, sampler="ddim", sigma=[0.0, 0.0])
        check(False, "short sigma list rejected")
    except ValueError:
        check(True, "short sigma list rejected")

    c = dl.Classifier(1, 2, 10, hidden=[8])
    c.train(small, 10, steps=200, batch=32)
    gx = c.grad_x([0.5], 5, 1, small)
    h = 1e-5
    fd = (c.log_probs([0.5 + h], 5, small)[1] - c.log_probs([0.5 - h], 5, small)[1]) / (2 * h)
    check(abs(gx[0] - fd) < 1e-6, "classifier input gradient")
    a = m.sample(small, 11, chains=50, guidance="classifier", scale=0.0, label=1, classifier=c)
    b = m.sample(small, 11, chains=50)
    check(a == b, "classifier guidance at scale 0 is unguided")

    cm = dl.NoisePredictor(1, 12, hidden=[16], classes=2)
    cm.train(small, 12, steps=200, batch=32)
    ys = cm.sample(small, 13, chains=50, guidance="cfg", scale=2.0, label=1)
    check(len(ys) == 50, "classifier-free guidance")

    with tempfile.TemporaryDirectory() as d:
        p = os.path.join(d, "m.ckpt")
        m.save(p, small, seed=7, train_steps=300)
        m2, s2 = dl.NoisePredictor.load(p)
        check(m2.params == m.params and s2.alpha_bars() == small.alpha_bars(), "checkpoint round trip")
        try:
            dl.Classifier.load(p)
            check(False, "wrong model kind rejected")
        except ValueError:
            check(True, "wrong model kind rejected")
        try:
            dl.NoisePredictor.load(os.path.join(d, "missing"))
            check(False, "missing file raises OSError")
        except OSError:
            check(True, "missing file raises OSError")

    print("all python smoke checks passed")


if __name__ == "__main__":
    main()

"""Imports the extension and exercises each binding once."""

import math

import pydifilter as dif


def main():
    assert "ls-diekf" in dif.filters()

    p = dif.Gaussian([0.0, 1.0], [[2.0, 0.3], [0.3, 1.0]])
    q = dif.Gaussian.scalar(0.0, 1.0)
    assert p.dim == 2 and q.mean == [0.0]
    assert abs(p.kl(p)) < 1e-12
    assert abs(q.log_pdf([0.0]) + 0.5 * math.log(2 * math.pi)) < 1e-12

    model = dif.Model.trig()
    states, ys = dif.simulate(model, [-2.9], steps=20, seed=4)
    assert len(states) == len(ys) == 20
    assert (states, ys) == dif.simulate(model, [-2.9], steps=20, seed=4)

    prior = dif.Gaussian.scalar(-2.9, 1.0)
    errors = {}
    for name in ("ekf", "diekf", "ls-diekf"):
        beliefs = dif.run(model, prior, ys, filter=name)
        assert len(beliefs) == 20
        assert all(b.posterior.cov[0][0] > 0 for b in beliefs)
        errors[name] = math.sqrt(
            sum((b.posterior.mean[0] - x[0]) ** 2 for b, x in zip(beliefs, states)) / len(states)
        )

    track = dif.Model.tracking(q1=0.1, sigma_sq=1.0)
    x0 = [0.0, 10.0, 0.0, 0.0, 0.1]
    states, ys = dif.simulate(track, x0, steps=10, seed=1)
    cov = [[10.0 if i == j else 0.0 for j in range(5)] for i in range(5)]
    beliefs = dif.run(track, dif.Gaussian(x0, cov), ys, filter="diukf")
    assert len(beliefs[-1].smoothed_prev.mean) == 5

    try:
        dif.run(model, prior, ys, filter="nope")
    except ValueError as e:
        assert "unknown filter" in str(e)
    else:
        raise AssertionError("bad filter name accepted")

    print("pydifilter smoke test ok; trig RMSE " + ", ".join(f"{k} {v:.3f}" for k, v in errors.items()))


if __name__ == "__main__":
    main()

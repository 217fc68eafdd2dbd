"""Quick check that the compiled extension loads and the main calls run."""

import math

import lrd


def main():
    y, x = lrd.simulate("M1", 400, d=0.0, seed=3)
    assert len(y) == 400 and len(x) == 400 and len(x[0]) == 1
    again, _ = lrd.simulate("M1", 400, d=0.0, seed=3)
    assert y == again

    bw = lrd.select_bandwidth(y, x)
    assert bw.lower <= bw.b <= bw.upper
    print(bw)

    results = lrd.run_test(y, x, replicates=200, seed=11, b=bw.b, m=5, tau=0.35)
    assert [r.test for r in results] == ["KPSS", "R/S", "V/S", "K/S"]
    for r in results:
        assert math.isfinite(r.statistic) and 0.0 <= r.p_value <= 1.0
        assert r.rejects(1.01)
        print(r)

    trend_y, _ = lrd.simulate("M0", 300, d=0.3, seed=5)
    (kpss,) = lrd.run_test(trend_y, tests=["kpss"], replicates=200, seed=1)
    print(kpss)

    try:
        lrd.run_test(y, x, tests=["nope"])
    except ValueError as err:
        print("rejected bad test name:", err)
    else:
        raise AssertionError("bad test name accepted")

    rows = lrd.size_experiment("M0", n=150, replications=50, replicates=100, seed=2)
    assert len(rows) == 8
    print("smoke test passed")


if __name__ == "__main__":
    main()

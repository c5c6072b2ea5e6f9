"""Print the mean-jump and rate-divergence tables for the built-in jump measures."""
import argparse

import numpy as np

from rollsim import slipping as S


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--eps", type=float, nargs="+", default=[0.5, 0.3, 0.2, 0.1, 0.05])
    args = p.parse_args()
    measures = [S.vanishing_mean_measure(), S.exploding_rate_measure(), S.exponential_measure(1.0)]
    for spec in measures:
        mj = S.check_mean_jump_condition(spec, args.eps)
        rd = S.check_rate_divergence(spec, args.eps)
        print(f"{spec.name}: mean-jump verdict {mj.verdict}, rate-divergence verdict {rd.verdict}")
        for e, a, logs in zip(mj.eps, mj.values, rd.extra["log_eps_rate"]):
            print(f"  eps={e:<5g} eps*log(mean jump)={a:+.5f}  log(eps*lambda)={logs:+.4g}")
        floor = S.saturation_floor(spec)
        if floor is not None:
            print(f"  rate saturates below eps={floor:.4g}")
    print("quadrature check, vanishing-mean:")
    q = S.check_mean_jump_condition(S.vanishing_mean_measure(), args.eps[:4], method="quadrature")
    print("  " + np.array2string(q.values, precision=5))


if __name__ == "__main__":
    main()

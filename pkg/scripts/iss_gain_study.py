"""Compare the claimed 1/mu gain of the (eta, p_tilde) block with its actual bounds.

For a sweep of lam (with k_eta = 2 sqrt(lam), the double-root tuning) the
script prints the overshoot of the free response alongside two input gains:
the sup-to-sup bound and the steady-state response to a held psi_tilde.
"""

import math

from delaysync.analysis import subsystem_peak_gains


def main() -> None:
    print(f"{'lam':>6} {'mu':>7} {'1/mu':>7} {'transient':>9} {'input gain':>10} {'dc gain':>8}")
    for lam in (1.0, 4.0, 13.0, 25.0, 100.0):
        k_eta = 2 * math.sqrt(lam)
        g = subsystem_peak_gains(k_eta, lam, t_end=40.0 / math.sqrt(lam))
        # held input w settles at eta = -w, p_tilde = k_eta w / lam
        dc = math.hypot(1.0, k_eta / lam)
        print(
            f"{lam:6.1f} {g['mu']:7.3f} {g['claimed_gain']:7.3f} {g['transient']:9.3f} "
            f"{g['input_gain']:10.3f} {dc:8.3f}"
        )


if __name__ == "__main__":
    main()

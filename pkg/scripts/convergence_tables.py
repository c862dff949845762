#!/usr/bin/env python3
"""Print every manufactured-solution convergence table in one go."""

from cuspflow.mms import (
    elliptic_convergence,
    format_table,
    orders,
    parabolic_space_convergence,
    parabolic_time_convergence,
)


def main():
    for eq in ("vr", "v3"):
        rows = elliptic_convergence(eq, 1, 1.1, (4, 5, 6))
        print(f"# elliptic {eq}, single rectangle")
        print(format_table(rows, orders(rows), "p"))
        rows = elliptic_convergence(eq, 3, 1.1, (3, 4, 5))
        print(f"# elliptic {eq}, staircase D_3")
        print(format_table(rows, orders(rows), "p"))
    for eq in ("h", "omega"):
        rows = parabolic_space_convergence(eq, (4, 5, 6))
        print(f"# parabolic {eq}, space")
        print(format_table(rows, orders(rows), "p"))
        rows = parabolic_time_convergence(eq, (8e-4, 4e-4, 2e-4), p=5)
        print(f"# parabolic {eq}, time")
        print(format_table(rows, orders(rows), "dt"))


if __name__ == "__main__":
    main()

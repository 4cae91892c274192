"""Derivation of the two-zone building model used by the `bas` preset.

A seven-state RC thermal network discretized by forward Euler at 15-minute
steps: two heated/controlled zones, two exterior wall nodes, one party
wall, two floor nodes. Zone 1 has the single heater input; a 6-dimensional
disturbance collects outside-temperature, solar, occupancy, and
ventilation fluctuations with a nonzero mean and non-identity covariance.
Run this script to print the matrices exactly as they appear in
`src/stochsyn/presets/bas.toml`.
"""

import numpy as np

DT = 900.0                       # s, 15-minute sampling

# thermal capacitances, J/K
C_ZONE = 2.5e6
C_EXT_WALL = 1.0e6
C_PARTY_WALL = 8.0e5
C_FLOOR = 6.0e5

# conductances, W/K
G_ZONE_WALL = 300.0              # zone <-> its exterior wall
G_ZONE_PARTY = 120.0             # zone <-> party wall
G_ZONE_FLOOR = 150.0             # zone <-> floor slab
G_ZONE_ZONE = 300.0             # direct interzonal exchange
G_WALL_OUT = 700.0               # exterior wall <-> ambient
G_FLOOR_GROUND = 200.0           # floor slab <-> ground

T_OUT = 9.0                      # degC nominal ambient
T_GROUND = 12.0
P_HEATER = 12000.0               # W at u = 1


def build():
    def k(G, C):
        return DT * G / C

    A = np.zeros((7, 7))
    # state order: Tz1 Tz2 Tw1 Tw2 Tw12 Tf1 Tf2
    kz_w = k(G_ZONE_WALL, C_ZONE)
    kz_p = k(G_ZONE_PARTY, C_ZONE)
    kz_f = k(G_ZONE_FLOOR, C_ZONE)
    kz_z = k(G_ZONE_ZONE, C_ZONE)
    A[0, 0] = 1 - kz_w - kz_p - kz_f - kz_z
    A[0, 1] = kz_z
    A[0, 2] = kz_w
    A[0, 4] = kz_p
    A[0, 5] = kz_f
    A[1, 1] = A[0, 0]
    A[1, 0] = kz_z
    A[1, 3] = kz_w
    A[1, 4] = kz_p
    A[1, 6] = kz_f
    kw_z = k(G_ZONE_WALL, C_EXT_WALL)
    kw_o = k(G_WALL_OUT, C_EXT_WALL)
    A[2, 2] = 1 - kw_z - kw_o
    A[2, 0] = kw_z
    A[3, 3] = A[2, 2]
    A[3, 1] = kw_z
    kp_z = k(G_ZONE_PARTY, C_PARTY_WALL)
    A[4, 4] = 1 - 2 * kp_z
    A[4, 0] = kp_z
    A[4, 1] = kp_z
    kf_z = k(G_ZONE_FLOOR, C_FLOOR)
    kf_g = k(G_FLOOR_GROUND, C_FLOOR)
    A[5, 5] = 1 - kf_z - kf_g
    A[5, 0] = kf_z
    A[6, 6] = A[5, 5]
    A[6, 1] = kf_z

    B = np.zeros((7, 1))
    B[0, 0] = DT * P_HEATER / C_ZONE

    a = np.zeros(7)
    a[2] = a[3] = kw_o * T_OUT
    a[5] = a[6] = kf_g * T_GROUND

    # disturbance channels: [dT_out, solar1, solar2, occupancy1,
    # occupancy2, ventilation]; gains are per-step temperature effects.
    B_w = np.zeros((7, 6))
    B_w[0, 3] = 0.08     # occupancy heat into zone 1
    B_w[0, 5] = 0.01
    B_w[1, 4] = 0.05
    B_w[1, 5] = 0.01
    B_w[2, 0] = 0.003    # ambient fluctuation through the wall
    B_w[2, 1] = 0.004    # solar on wall 1
    B_w[3, 0] = 0.003
    B_w[3, 2] = 0.004
    B_w[4, 0] = 0.001
    B_w[5, 0] = 0.002
    B_w[6, 0] = 0.002
    mu = np.array([0.0, 0.5, 0.4, 0.6, 0.4, 0.0])
    Sigma = np.diag([4.0, 1.0, 1.0, 0.25, 0.25, 0.5])

    C = np.zeros((1, 7))
    C[0, 0] = 1.0
    return A, B, C, a, B_w, mu, Sigma


def main():
    A, B, C, a, B_w, mu, Sigma = build()
    np.set_printoptions(precision=6, suppress=True, linewidth=140)
    print("rho(A) =", np.max(np.abs(np.linalg.eigvals(A))))
    for name, M in [("A", A), ("B", B), ("C", C), ("a", a), ("Bw", B_w),
                    ("mu", mu), ("Sigma", Sigma)]:
        print(f"{name} =")
        print(np.array2string(np.asarray(M), separator=", "))


if __name__ == "__main__":
    main()

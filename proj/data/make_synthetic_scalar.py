"""Writes synthetic_scalar.csv: 10^4 noisy samples of the Lorenz-63 x coordinate."""
import numpy as np


def lorenz(s, sigma=10.0, rho=28.0, beta=8.0 / 3.0):
    x, y, z = s
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def rk4(s, dt):
    k1 = lorenz(s)
    k2 = lorenz(s + 0.5 * dt * k1)
    k3 = lorenz(s + 0.5 * dt * k2)
    k4 = lorenz(s + dt * k3)
    return s + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def main():
    dt, transient, n = 0.01, 5000, 10000
    s = np.array([1.0, 1.0, 1.0])
    for _ in range(transient):
        s = rk4(s, dt)
    xs = np.empty(n)
    for t in range(n):
        s = rk4(s, dt)
        xs[t] = s[0]
    rng = np.random.default_rng(7)
    xs += 0.01 * xs.std() * rng.standard_normal(n)
    with open("synthetic_scalar.csv", "w") as f:
        f.write("x\n")
        for v in xs:
            f.write(f"{v:.10g}\n")


if __name__ == "__main__":
    main()

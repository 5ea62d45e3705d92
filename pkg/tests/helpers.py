import numpy as np


def rotation(angle):
    return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])


def trajectory(operator, start, length):
    states = [np.asarray(start, dtype=np.float64)]
    for _ in range(length - 1):
        states.append(operator @ states[-1])
    return np.array(states)


def stable_symmetric_system(p, seed):
    """Random A = Q diag(lambda) Q^T with eigenvalues spread over [0.5, 0.95]."""
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((p, p)))
    eigenvalues = np.linspace(0.5, 0.95, p)
    return q @ np.diag(eigenvalues) @ q.T, rng.standard_normal(p)


def damped_oscillation(radius, angle, length):
    """Frames [Re z^k, Im z^k] of z = radius * exp(i angle); eigenvalues radius * exp(+-i angle)."""
    z = (radius * np.exp(1j * angle)) ** np.arange(length)
    return np.column_stack([z.real, z.imag])


SMALL_NETWORK = {
    "lines": [[0, 1, 10.0], [1, 2, 9.0], [2, 3, 11.0], [3, 0, 10.0]],
    "inertia": [0.1, 0.15, 0.12, 0.2],
    "damping": [0.04, 0.05, 0.03, 0.05],
    "injection": [0.2, -0.1, 0.1, -0.2],
    "pinned": [],
}

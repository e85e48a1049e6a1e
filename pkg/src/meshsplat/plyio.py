"""Binary PLY for Gaussian point sets, matching the de-facto splat layout:
positions, zeroed normals, DC and rest SH coefficients, opacity logit,
log scales, and the rotation quaternion."""

from __future__ import annotations

import numpy as np

from .errors import SchemaError
from .gaussians import GaussianCloud, inverse_sigmoid, sigmoid


def _property_names(num_coeffs: int) -> list[str]:
    names = ["x", "y", "z", "nx", "ny", "nz"]
    names += [f"f_dc_{i}" for i in range(3)]
    names += [f"f_rest_{i}" for i in range(3 * (num_coeffs - 1))]
    names += ["opacity"]
    names += [f"scale_{i}" for i in range(3)]
    names += [f"rot_{i}" for i in range(4)]
    return names


def export_gaussians_ply(cloud: GaussianCloud, path) -> None:
    """Write activated Gaussians in the raw-parameter PLY convention."""
    n = len(cloud)
    k = cloud.sh.shape[1]
    names = _property_names(k)
    cols = [cloud.mu[:, 0], cloud.mu[:, 1], cloud.mu[:, 2],
            np.zeros(n), np.zeros(n), np.zeros(n)]
    cols += [cloud.sh[:, 0, c] for c in range(3)]
    # rest coefficients are stored coefficient-major per channel
    rest = cloud.sh[:, 1:, :]
    for c in range(3):
        for j in range(k - 1):
            cols.append(rest[:, j, c])
    cols.append(inverse_sigmoid(np.clip(cloud.opacity, 1e-7, 1.0 - 1e-7)))
    cols += [np.log(cloud.scale[:, i]) for i in range(3)]
    cols += [cloud.quat[:, i] for i in range(4)]

    data = np.stack(cols, axis=1).astype("<f4") if n else np.zeros((0, len(names)), "<f4")
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header += ["end_header", ""]
    with open(path, "wb") as f:
        f.write("\n".join(header).encode("ascii"))
        f.write(data.tobytes())


def import_gaussians_ply(path) -> GaussianCloud:
    with open(path, "rb") as f:
        raw = f.read()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise SchemaError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", "replace").splitlines()
    if "format binary_little_endian 1.0" not in header[1]:
        raise SchemaError(f"{path}: expected binary little-endian PLY")
    n = None
    props = []
    for line in header:
        if line.startswith("element vertex"):
            n = int(line.split()[-1])
        elif line.startswith("element ") and n is not None and props:
            break
        elif line.startswith("property float"):
            props.append(line.split()[-1])
    if n is None:
        raise SchemaError(f"{path}: no vertex element")

    idx = {p: i for i, p in enumerate(props)}
    base_required = ["x", "y", "z", "opacity", "scale_0", "scale_1", "scale_2",
                     "rot_0", "rot_1", "rot_2", "rot_3", "f_dc_0", "f_dc_1", "f_dc_2"]
    missing = [p for p in base_required if p not in idx]
    if missing:
        raise SchemaError(f"{path}: missing properties {missing}")
    n_rest = sum(1 for p in props if p.startswith("f_rest_"))
    if n_rest % 3 != 0:
        raise SchemaError(f"{path}: f_rest_* count {n_rest} not divisible by 3")
    k = n_rest // 3 + 1

    data = np.frombuffer(raw[end + len(b"end_header\n"):], "<f4")
    if data.size != n * len(props):
        raise SchemaError(f"{path}: payload has {data.size} floats, "
                          f"header promises {n * len(props)}")
    data = data.reshape(n, len(props)).astype(np.float64)

    def col(name):
        return data[:, idx[name]]

    mu = np.stack([col("x"), col("y"), col("z")], axis=1)
    sh = np.zeros((n, k, 3))
    for c in range(3):
        sh[:, 0, c] = col(f"f_dc_{c}")
        for j in range(k - 1):
            sh[:, j + 1, c] = col(f"f_rest_{c * (k - 1) + j}")
    opacity = sigmoid(col("opacity"))
    scale = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    quat = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    return GaussianCloud(mu, quat, scale, opacity, sh)

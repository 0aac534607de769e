"""Per-part guidance classifier: RBF-kernel SVM trained by SMO, with
Platt-calibrated confidences and a rank-based AUC metric.

The dual problem is solved with maximal-violating-pair working-set
selection. Kernel rows are cached by sample index; the full gradient is
kept incrementally up to date, which is cheap at the patch counts this
toolkit sees.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import FeatureBlob, load_features, write_features


class TrainingError(Exception):
    pass


@dataclass
class TrainConfig:
    C: float = 1.0
    gamma: object = "auto"  # float or "auto" = 1/(dim * feature variance)
    tolerance: float = 1e-3
    max_passes: int = 10000  # cap on working-set iterations
    seed: int = 0
    balance_classes: bool = True  # C_pos scaled by #neg/#pos
    max_samples: int = 2048  # dense-kernel budget; negatives subsampled past it

    def __post_init__(self):
        if self.C <= 0 or self.tolerance <= 0 or self.max_passes <= 0:
            raise ValueError("C, tolerance and max_passes must be positive")
        if self.gamma != "auto" and float(self.gamma) <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class GuidanceModel:
    part_class: str
    support_vectors: np.ndarray  # (n_sv, dim)
    dual_coefficients: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    kernel_gamma: float
    platt_a: float
    platt_b: float
    feature_dim: int

    def decision_value(self, feature):
        feature = np.asarray(feature, dtype=np.float64)
        if feature.shape != (self.feature_dim,):
            raise ValueError(
                f"feature has shape {feature.shape}, expected ({self.feature_dim},)"
            )
        if not np.isfinite(feature).all():
            raise ValueError("non-finite feature")
        diff = self.support_vectors - feature
        kernel = np.exp(-self.kernel_gamma * np.sum(diff * diff, axis=1))
        return float(self.dual_coefficients @ kernel + self.bias)


def rbf_kernel_matrix(x, gamma, y=None):
    y = x if y is None else y
    sq = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ y.T
        + np.sum(y * y, axis=1)[None, :]
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


def resolve_gamma(gamma, features):
    if gamma == "auto":
        variance = float(features.var())
        if variance <= 0:
            variance = 1.0
        return 1.0 / (features.shape[1] * variance)
    return float(gamma)


def smo_solve(kernel, labels, c_per_sample, tolerance, max_iterations):
    """Solve the SVM dual by SMO with maximal-violating-pair selection.

    Minimizes 0.5 a'Qa - e'a subject to 0 <= a_i <= C_i and sum(a_i y_i) = 0,
    with Q_ij = y_i y_j K_ij. Returns (alpha, bias, kkt_gap).
    """
    n = len(labels)
    y = labels.astype(np.float64)
    q = kernel * np.outer(y, y)
    alpha = np.zeros(n)
    gradient = -np.ones(n)  # Q a - e at a = 0
    tau = 1e-12

    gap = np.inf
    for _ in range(max_iterations):
        minus_yg = -y * gradient
        up = ((y > 0) & (alpha < c_per_sample)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c_per_sample)) | ((y > 0) & (alpha > 0))
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(minus_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(minus_yg[low])])
        gap = minus_yg[i] - minus_yg[j]
        if gap < tolerance:
            break

        old_i, old_j = alpha[i], alpha[j]
        ci, cj = c_per_sample[i], c_per_sample[j]
        if y[i] != y[j]:
            quad = max(q[i, i] + q[j, j] + 2.0 * q[i, j], tau)
            delta = (-gradient[i] - gradient[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > ci - cj:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = ci - diff
            else:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = cj + diff
        else:
            quad = max(q[i, i] + q[j, j] - 2.0 * q[i, j], tau)
            delta = (gradient[i] - gradient[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > ci:
                if alpha[i] > ci:
                    alpha[i] = ci
                    alpha[j] = total - ci
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > cj:
                if alpha[j] > cj:
                    alpha[j] = cj
                    alpha[i] = total - cj
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total

        gradient += q[:, i] * (alpha[i] - old_i) + q[:, j] * (alpha[j] - old_j)

    # dual feasibility must hold whenever the solver exits
    assert np.all(alpha >= -1e-9) and np.all(alpha <= c_per_sample + 1e-9)
    assert abs(float(alpha @ y)) < 1e-8 * (1.0 + float(np.abs(alpha).sum()))
    np.clip(alpha, 0.0, c_per_sample, out=alpha)

    minus_yg = -y * gradient
    free = (alpha > 1e-12) & (alpha < c_per_sample - 1e-12)
    if free.any():
        bias = float(np.mean(minus_yg[free]))
    else:
        up = ((y > 0) & (alpha < c_per_sample)) | ((y < 0) & (alpha > 0))
        low = ((y < 0) & (alpha < c_per_sample)) | ((y > 0) & (alpha > 0))
        hi = minus_yg[up].max() if up.any() else 0.0
        lo = minus_yg[low].min() if low.any() else 0.0
        bias = float((hi + lo) / 2.0)
    return alpha, bias, float(max(gap, 0.0))


def dual_objective(kernel, labels, alpha):
    q = kernel * np.outer(labels, labels)
    return float(0.5 * alpha @ q @ alpha - alpha.sum())


def fit_platt(decision_values, labels, max_iterations=100):
    """Fit calibration so that sigmoid(a*f + b) approximates P(label=1 | f).

    Newton iterations on the regularized log-loss with the usual smoothed
    targets; robust to separable inputs.
    """
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int(np.sum(y == 1))
    n_neg = len(y) - n_pos
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y == 1, hi, lo)

    # parameterized as p = 1/(1+exp(a*f + b)); returned negated to match
    # the sigmoid(a*f + b) convention
    a, b = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))
    sigma = 1e-12

    def value(a, b):
        z = a * f + b
        return float(np.sum(np.where(
            z >= 0,
            t * z + np.log1p(np.exp(-z)),
            (t - 1.0) * z + np.log1p(np.exp(z)),
        )))

    best = value(a, b)
    for _ in range(max_iterations):
        z = a * f + b
        p = np.where(z >= 0, np.exp(-z) / (1.0 + np.exp(-z)),
                     1.0 / (1.0 + np.exp(z)))
        d1 = t - p
        d2 = p * (1.0 - p)
        g_a = float(np.sum(f * d1))
        g_b = float(np.sum(d1))
        if abs(g_a) < 1e-5 and abs(g_b) < 1e-5:
            break
        h_aa = float(np.sum(f * f * d2)) + sigma
        h_bb = float(np.sum(d2)) + sigma
        h_ab = float(np.sum(f * d2))
        det = h_aa * h_bb - h_ab * h_ab
        da = -(h_bb * g_a - h_ab * g_b) / det
        db = -(-h_ab * g_a + h_aa * g_b) / det
        step = 1.0
        while step >= 1e-10:
            cand = value(a + step * da, b + step * db)
            if cand < best + 1e-4 * step * (g_a * da + g_b * db):
                a += step * da
                b += step * db
                best = cand
                break
            step /= 2.0
        else:
            break
    return -a, -b


def train(features, labels, part_class="", config=None):
    """Train a GuidanceModel on (feature matrix, 0/1 labels)."""
    config = config or TrainConfig()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if features.ndim != 2 or features.shape[0] != len(labels):
        raise TrainingError("features and labels disagree in length")
    if not np.isfinite(features).all():
        raise TrainingError("non-finite feature values")
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise TrainingError("need at least one sample of each label")

    if len(labels) > config.max_samples:
        # keep the rare positives, subsample the rest deterministically
        rng = np.random.default_rng(config.seed)
        pos_idx = np.flatnonzero(labels == 1)
        neg_idx = np.flatnonzero(labels == 0)
        if len(pos_idx) > config.max_samples // 2:
            pos_idx = rng.choice(pos_idx, config.max_samples // 2,
                                 replace=False)
        budget = config.max_samples - len(pos_idx)
        if len(neg_idx) > budget:
            neg_idx = rng.choice(neg_idx, budget, replace=False)
        keep = np.sort(np.concatenate([pos_idx, neg_idx]))
        features = features[keep]
        labels = labels[keep]
        n_pos = int(np.sum(labels == 1))
        n_neg = len(labels) - n_pos

    y = np.where(labels == 1, 1.0, -1.0)
    gamma = resolve_gamma(config.gamma, features)
    c_per_sample = np.full(len(y), config.C)
    if config.balance_classes and n_pos != n_neg:
        c_per_sample[y > 0] = config.C * (n_neg / n_pos)

    kernel = rbf_kernel_matrix(features, gamma)
    alpha, bias, gap = smo_solve(kernel, y, c_per_sample, config.tolerance,
                                 config.max_passes)

    sv = alpha > 1e-9
    model = GuidanceModel(
        part_class=part_class,
        support_vectors=features[sv].copy(),
        dual_coefficients=(alpha * y)[sv].copy(),
        bias=bias,
        kernel_gamma=gamma,
        platt_a=1.0,
        platt_b=0.0,
        feature_dim=features.shape[1],
    )
    decisions = kernel[:, sv] @ (alpha * y)[sv] + bias
    model.platt_a, model.platt_b = fit_platt(decisions, labels)
    return model


def predict(model, feature):
    """Calibrated confidence in [0, 1] that the patch contains the part."""
    value = model.platt_a * model.decision_value(feature) + model.platt_b
    if value >= 0:
        return float(1.0 / (1.0 + np.exp(-value)))
    e = np.exp(value)
    return float(e / (1.0 + e))


def predict_many(model, features):
    features = np.asarray(features, dtype=np.float64)
    kernel = rbf_kernel_matrix(features, model.kernel_gamma,
                               model.support_vectors)
    decisions = kernel @ model.dual_coefficients + model.bias
    z = model.platt_a * decisions + model.platt_b
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500, 500)))


def auc(scored):
    """Area under the ROC curve by the rank statistic, ties at half credit.

    scored: iterable of (score, label) with labels in {0, 1}.
    """
    pairs = list(scored)
    scores = np.array([s for s, _ in pairs], dtype=np.float64)
    labels = np.array([l for _, l in pairs], dtype=int)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both labels present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0  # average rank, 1-based
        i = j + 1
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def save_model(model, path):
    """Persist as a JSON header plus a GSFV support-vector blob alongside."""
    path = Path(path)
    sv_path = path.with_suffix(path.suffix + ".sv")
    keys = [("sv", i) for i in range(len(model.support_vectors))]
    write_features(FeatureBlob(keys, model.support_vectors), sv_path)
    header = {
        "part_class": model.part_class,
        "bias": model.bias,
        "kernel_gamma": model.kernel_gamma,
        "platt_a": model.platt_a,
        "platt_b": model.platt_b,
        "feature_dim": model.feature_dim,
        "dual_coefficients": [float(v) for v in model.dual_coefficients],
        "support_vector_blob": sv_path.name,
    }
    with open(path, "w") as f:
        json.dump(header, f, indent=2)


def load_model(path):
    path = Path(path)
    with open(path) as f:
        header = json.load(f)
    blob = load_features(path.parent / header["support_vector_blob"])
    return GuidanceModel(
        part_class=header["part_class"],
        support_vectors=blob.matrix.astype(np.float64),
        dual_coefficients=np.array(header["dual_coefficients"]),
        bias=header["bias"],
        kernel_gamma=header["kernel_gamma"],
        platt_a=header["platt_a"],
        platt_b=header["platt_b"],
        feature_dim=header["feature_dim"],
    )

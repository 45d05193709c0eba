"""Per-example reference for the training objective, independent of the batched path."""
import numpy as np

from metrec.dataset import feature_vector
from metrec.metric import triplet_loss
from metrec.mlp import finite_difference_grad, mlp_forward


def clip(h, r):
    if r is None:
        return h
    n = np.sqrt(h @ h)
    return h * (r / n) if n > r else h


def reference_loss(model, triplets):
    spec, r = model.feature_spec, model.clip_radius
    total = 0.0
    for u, p, n in triplets:
        ha = clip(mlp_forward(model.user_tower, feature_vector(spec, u, "user"))[0], r)
        hp = clip(mlp_forward(model.item_tower, feature_vector(spec, p, "item"))[0], r)
        hn = clip(mlp_forward(model.item_tower, feature_vector(spec, n, "item"))[0], r)
        total += triplet_loss(ha, hp, hn, model.margin)
    return total / len(triplets)


def reference_grads(model, triplets, eps=1e-6):
    gu = finite_difference_grad(lambda _: reference_loss(model, triplets), model.user_tower, eps)
    gi = finite_difference_grad(lambda _: reference_loss(model, triplets), model.item_tower, eps)
    return gu, gi


def hinge_margin(model, triplets):
    """Smallest |hinge argument| over the batch (distance from the kink)."""
    spec = model.feature_spec
    out = []
    for u, p, n in triplets:
        ha = clip(mlp_forward(model.user_tower, feature_vector(spec, u, "user"))[0], model.clip_radius)
        hp = clip(mlp_forward(model.item_tower, feature_vector(spec, p, "item"))[0], model.clip_radius)
        hn = clip(mlp_forward(model.item_tower, feature_vector(spec, n, "item"))[0], model.clip_radius)
        out.append(abs(np.linalg.norm(ha - hp) - np.linalg.norm(ha - hn) + model.margin))
    return min(out)


def relu_kink_distance(model, triplets):
    """Smallest |pre-activation| of any hidden unit touched by the batch."""
    spec = model.feature_spec
    best = np.inf
    for u, p, n in triplets:
        for tower, idx, side in ((model.user_tower, u, "user"), (model.item_tower, p, "item"), (model.item_tower, n, "item")):
            _, cache = mlp_forward(tower, feature_vector(spec, idx, side))
            for z in cache.pre[:-1]:
                best = min(best, float(np.abs(z).min()))
    return best

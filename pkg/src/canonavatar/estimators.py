"""scikit-learn style wrappers around the functional core.

Constructor arguments are stored untouched (so `get_params`/`clone` work);
everything derived is computed in `fit` and stored with a trailing underscore.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import SurfaceIndex
from .refine import RefineConfig, RenderTarget, refine_cloud
from .render import GAMMA, EPSILON, MAX_CONTRIBUTORS, RenderSettings, SphereCloud, render
from .rig import Pose, Rig, SkinWeightMatrix, forward_kinematics, lbs_apply, lbs_invert, repose_mesh
from .semspace import DEFAULT_CUTOFF, FeatureKind, assign_skin_weights, check_landmarks, feature_dim, semdf_to_canonical, spatial_features
from .validation import check_points


def _as_weights(w) -> SkinWeightMatrix:
    return w if isinstance(w, SkinWeightMatrix) else SkinWeightMatrix(w)


class LBSTransformer(TransformerMixin, BaseEstimator):
    """Linear blend skinning with fixed per-point weights.

    Parameters
    ----------
    rig : Rig
    pose : Pose
    weights : SkinWeightMatrix or array of shape (N, K)
        One row per point that will be passed to `transform`.
    """

    def __init__(self, rig=None, pose=None, weights=None):
        self.rig = rig
        self.pose = pose
        self.weights = weights

    def fit(self, X=None, y=None):
        if not isinstance(self.rig, Rig) or not isinstance(self.pose, Pose):
            raise TypeError("rig and pose must be Rig and Pose instances")
        self.weights_ = _as_weights(self.weights)
        self.transforms_ = forward_kinematics(self.rig, self.pose)
        if self.weights_.n_parts != self.rig.n_joints:
            raise ValueError(f"weights have {self.weights_.n_parts} parts, rig has {self.rig.n_joints} joints")
        return self

    def transform(self, X):
        check_is_fitted(self, "transforms_")
        return lbs_apply(check_points(X), self.weights_, self.transforms_)

    def inverse_transform(self, X):
        """Invert the blended transform; ill-conditioned rows are flagged in `valid_`."""
        check_is_fitted(self, "transforms_")
        res = lbs_invert(check_points(X), self.weights_, self.transforms_)
        self.valid_ = res.valid
        return res.points


class SemanticDeformationField(TransformerMixin, BaseEstimator):
    """Posed-space points -> canonical points through a skinned template.

    `fit` poses the template and builds its surface index. `transform` maps
    arbitrary posed points to the canonical frame; points beyond `cutoff`
    from the posed template are returned unchanged and flagged in
    `assigned_`. `inverse_transform` goes canonical -> posed with weights
    looked up on the canonical template.
    """

    def __init__(self, template=None, template_weights=None, rig=None, pose=None, cutoff=DEFAULT_CUTOFF):
        self.template = template
        self.template_weights = template_weights
        self.rig = rig
        self.pose = pose
        self.cutoff = cutoff

    def fit(self, X=None, y=None):
        if self.template is None or self.rig is None or self.pose is None:
            raise ValueError("template, rig and pose are required")
        if not self.cutoff > 0:
            raise ValueError("cutoff must be positive")
        self.weights_ = _as_weights(self.template_weights)
        self.posed_template_ = repose_mesh(self.template, self.weights_, self.rig, self.pose)
        self.posed_index_ = SurfaceIndex(self.posed_template_)
        self.canonical_index_ = SurfaceIndex(self.template)
        self.transforms_ = forward_kinematics(self.rig, self.pose)
        return self

    def transform_full(self, X):
        """Like `transform` but returns the full `SemanticPointSet`."""
        check_is_fitted(self, "posed_index_")
        return semdf_to_canonical(
            check_points(X), self.posed_template_, self.weights_, self.rig, self.pose, self.cutoff, self.posed_index_
        )

    def transform(self, X):
        sem = self.transform_full(X)
        self.assigned_ = sem.assigned
        return sem.positions

    def inverse_transform(self, X):
        check_is_fitted(self, "canonical_index_")
        X = check_points(X)
        sem = assign_skin_weights(X, self.template, self.weights_, self.cutoff, self.canonical_index_)
        self.assigned_ = sem.assigned
        out = X.copy()
        if sem.assigned.any():
            out[sem.assigned] = lbs_apply(X[sem.assigned], sem.weights.subset(sem.assigned), self.transforms_)
        return out


class SpatialFeatureEncoder(TransformerMixin, BaseEstimator):
    """Landmark-relative point features (xyz, l2, rbf or rbf_per_axis)."""

    def __init__(self, landmarks=None, kind="rbf_per_axis", length_scale=1.0):
        self.landmarks = landmarks
        self.kind = kind
        self.length_scale = length_scale

    def fit(self, X=None, y=None):
        self.landmarks_ = check_landmarks(self.landmarks)
        self.kind_ = FeatureKind(self.kind)
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")
        self.n_features_out_ = feature_dim(self.kind_, len(self.landmarks_))
        return self

    def transform(self, X):
        check_is_fitted(self, "landmarks_")
        return spatial_features(check_points(X), self.landmarks_, self.kind_, self.length_scale)


class RenderAndCompareRefiner(BaseEstimator):
    """Refine sphere-cloud colors/normals against target images.

    `fit(cloud, targets)` takes a `SphereCloud` and a list of `RenderTarget`
    (or of (camera, color[, normal]) tuples). `predict(cameras)` renders the
    refined cloud.
    """

    def __init__(
        self, steps=200, learning_rate=1e-3, optimizer="adaptive-rms", decay_every=None,
        optimize_opacity=False, gamma=GAMMA, epsilon=EPSILON, sigma_d=1.0, max_contributors=MAX_CONTRIBUTORS, seed=0,
    ):
        self.steps = steps
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.decay_every = decay_every
        self.optimize_opacity = optimize_opacity
        self.gamma = gamma
        self.epsilon = epsilon
        self.sigma_d = sigma_d
        self.max_contributors = max_contributors
        self.seed = seed

    def _settings(self):
        return RenderSettings(gamma=self.gamma, epsilon=self.epsilon, sigma_d=self.sigma_d, max_contributors=self.max_contributors)

    def fit(self, X, y):
        if not isinstance(X, SphereCloud):
            raise TypeError("X must be a SphereCloud")
        targets = [t if isinstance(t, RenderTarget) else RenderTarget(*t) for t in y]
        cfg = RefineConfig(
            steps=self.steps, learning_rate=self.learning_rate, optimizer=self.optimizer,
            decay_every=self.decay_every, optimize_opacity=self.optimize_opacity, seed=self.seed,
        )
        res = refine_cloud(X, targets, cfg, self._settings())
        self.cloud_ = res.cloud
        self.trace_ = res.trace
        self.loss_trace_ = res.total
        return self

    def predict(self, cameras):
        check_is_fitted(self, "cloud_")
        return [render(self.cloud_, cam, self._settings(), keep_records=False) for cam in cameras]

    def score(self, X, y):
        """Negative mean absolute color error of the refined cloud against the targets `y`."""
        check_is_fitted(self, "cloud_")
        targets = [t if isinstance(t, RenderTarget) else RenderTarget(*t) for t in y]
        errs = [np.abs(o.color - t.color).mean() for o, t in zip(self.predict([t.camera for t in targets]), targets)]
        return -float(np.mean(errs))

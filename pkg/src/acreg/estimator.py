"""Scikit-learn style front end for the registration pipeline."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .autocontext import AutoContextConfig, register_auto_context
from .errors import InvalidInputError
from .loss import LossWeights
from .metrics import dice
from .optimizer import OptimizerConfig
from .transform import warp_labels, warp_scalar
from .validation import as_label_volume, as_scalar_volume, check_matching_grids
from .volume import GRAY_MATTER, WHITE_MATTER, LabelVolume, ScalarVolume


class AutoContextRegistration(BaseEstimator):
    """Deformable registration of a moving tissue label volume to a fixed one.

    ``fit(X, y)`` estimates the deformation taking the moving labels ``X``
    onto the fixed labels ``y``; ``transform`` then warps volumes from the
    moving frame into the fixed frame using the fitted field. Inputs can be
    plain 3D integer arrays or :class:`~acreg.volume.LabelVolume` objects.

    Parameters mirror the registration configuration; see
    :class:`~acreg.optimizer.OptimizerConfig` and
    :class:`~acreg.autocontext.AutoContextConfig` for their meaning.

    Attributes (after fit)
    ----------------------
    displacement_field_ : DisplacementField
        Composed deformation, ``phi(x) = x + u(x)`` in voxel units.
    warped_labels_ : LabelVolume
        The moving labels warped by the fitted field.
    diagnostics_ : tuple of IterationDiagnostics
        Per-iteration DSC, folding ratio, and loss breakdown.
    """

    def __init__(self, n_iterations=5, learning_rate=1e-2, max_iterations=200,
                 pyramid_factors=(4, 2, 1), squaring_steps=7, ncc_window=9,
                 lambda_sim=1.0, lambda_v=1.0, lambda_j=1.0, sigma_soft=1.0,
                 convergence_tol=1e-5, early_stop=False, spacing=(1.0, 1.0, 1.0)):
        self.n_iterations = n_iterations
        self.learning_rate = learning_rate
        self.max_iterations = max_iterations
        self.pyramid_factors = pyramid_factors
        self.squaring_steps = squaring_steps
        self.ncc_window = ncc_window
        self.lambda_sim = lambda_sim
        self.lambda_v = lambda_v
        self.lambda_j = lambda_j
        self.sigma_soft = sigma_soft
        self.convergence_tol = convergence_tol
        self.early_stop = early_stop
        self.spacing = spacing

    def _config(self):
        weights = LossWeights(self.lambda_sim, self.lambda_v, self.lambda_j)
        optimizer = OptimizerConfig(
            learning_rate=self.learning_rate,
            max_iterations=self.max_iterations,
            pyramid_factors=tuple(self.pyramid_factors),
            squaring_steps=self.squaring_steps,
            ncc_window=self.ncc_window,
            weights=weights,
            convergence_tol=self.convergence_tol,
        )
        return AutoContextConfig(
            n_iterations=self.n_iterations,
            optimizer=optimizer,
            sigma_soft=self.sigma_soft,
            early_stop=self.early_stop,
        )

    def fit(self, X, y):
        """Estimate the deformation from moving labels ``X`` to fixed labels ``y``."""
        moving = as_label_volume(X, self.spacing)
        fixed = as_label_volume(y, self.spacing)
        check_matching_grids(moving, fixed)
        result = register_auto_context(moving, fixed, self._config())
        self.result_ = result
        self.displacement_field_ = result.final_field
        self.warped_labels_ = result.warped_labels
        self.diagnostics_ = result.diagnostics
        return self

    def _check_fitted(self):
        if not hasattr(self, "displacement_field_"):
            raise InvalidInputError("this estimator is not fitted yet; call fit first")

    def transform(self, X):
        """Warp a volume from the moving frame into the fixed frame.

        Integer-typed arrays and LabelVolumes are warped with nearest-neighbor
        lookup, everything else with trilinear interpolation. Plain arrays
        come back as plain arrays.
        """
        self._check_fitted()
        phi = self.displacement_field_
        if isinstance(X, LabelVolume) or (
                isinstance(X, np.ndarray) and np.issubdtype(X.dtype, np.integer)):
            labels = as_label_volume(X, self.spacing)
            check_matching_grids(phi, labels)
            warped = warp_labels(labels, phi)
            return warped if isinstance(X, LabelVolume) else np.asarray(warped.labels)
        volume = as_scalar_volume(X, self.spacing)
        check_matching_grids(phi, volume)
        warped = warp_scalar(volume, phi)
        return warped if isinstance(X, ScalarVolume) else np.asarray(warped.values)

    def fit_transform(self, X, y):
        """Fit on the pair and return the warped moving labels."""
        return self.fit(X, y).transform(X)

    def score(self, X, y):
        """Mean GM/WM Dice between ``transform(X)`` and the labels ``y``."""
        self._check_fitted()
        warped = as_label_volume(self.transform(X), self.spacing)
        fixed = as_label_volume(y, self.spacing)
        return 0.5 * (dice(warped, fixed, GRAY_MATTER) + dice(warped, fixed, WHITE_MATTER))

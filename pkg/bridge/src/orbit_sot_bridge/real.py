"""Real model adapters: SAM for segmentation, TAPIR for point tracking.

Imported only when checkpoints are configured, so the stub path has no
torch dependency.  Import or weight-loading failures are wrapped in
:class:`~orbit_sot_bridge.models.ModelLoadError`, which the server reports
over the wire before exiting with code 3.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .models import ModelLoadError, RequestError


def _as_rgb(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return np.stack([image, image, image], axis=-1)
    if image.ndim == 3 and image.shape[2] >= 3:
        return image[:, :, :3]
    raise RequestError(f"cannot interpret image of shape {image.shape} as RGB")


def _sam_model_type(checkpoint: str) -> str:
    """Infer the SAM backbone from the checkpoint filename, defaulting vit_h."""
    name = checkpoint.lower()
    for model_type in ("vit_h", "vit_l", "vit_b"):
        if model_type in name:
            return model_type
    return "vit_h"


class RealModels:
    """Serve segmentation from SAM and tracking from TAPIR."""

    def __init__(self, sam_checkpoint: str, tapir_checkpoint: str, device: str):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadError(f"torch is not installed: {exc}") from exc
        self._torch = torch
        self._device = device
        self._predictor = self._load_sam(sam_checkpoint, device)
        self._tapir = self._load_tapir(tapir_checkpoint, device)

    def _load_sam(self, checkpoint: str, device: str):
        try:
            from segment_anything import SamPredictor, sam_model_registry
        except ImportError as exc:
            raise ModelLoadError(f"segment-anything is not installed: {exc}") from exc
        try:
            sam = sam_model_registry[_sam_model_type(checkpoint)](checkpoint=checkpoint)
        except (OSError, RuntimeError, KeyError) as exc:
            raise ModelLoadError(f"failed to load SAM checkpoint: {exc}") from exc
        sam.to(device)
        sam.eval()
        return SamPredictor(sam)

    def _load_tapir(self, checkpoint: str, device: str):
        try:
            from tapnet.torch import tapir_model
        except ImportError as exc:
            raise ModelLoadError(f"tapnet is not installed: {exc}") from exc
        try:
            model = tapir_model.TAPIR(pyramid_level=1)
            state = self._torch.load(checkpoint, map_location=device)
            model.load_state_dict(state)
        except (OSError, RuntimeError) as exc:
            raise ModelLoadError(f"failed to load TAPIR checkpoint: {exc}") from exc
        model.to(device)
        model.eval()
        return model

    def segment(self, image: np.ndarray, prompt: dict[str, Any]) -> np.ndarray:
        self._predictor.set_image(_as_rgb(image))
        box = None
        point_coords = None
        point_labels = None
        if "box" in prompt:
            x, y, w, h = (float(v) for v in prompt["box"])
            box = np.array([x, y, x + w, y + h])
        elif "point" in prompt:
            point_coords = np.array([prompt["point"]], dtype=float)
            point_labels = np.ones(1, dtype=int)
        elif "points" in prompt:
            if not prompt["points"]:
                raise RequestError("prompt.points must not be empty")
            point_coords = np.array(prompt["points"], dtype=float)
            point_labels = np.ones(len(prompt["points"]), dtype=int)
        else:
            raise RequestError("prompt must contain one of: box, point, points")
        masks, scores, _ = self._predictor.predict(
            point_coords=point_coords,
            point_labels=point_labels,
            box=box,
            multimask_output=True,
        )
        return np.asarray(masks[int(np.argmax(scores))], dtype=bool)

    def track(
        self, images: list[np.ndarray], queries: list[list[float]]
    ) -> tuple[list[list[list[float]]], list[list[bool]]]:
        torch = self._torch
        video = np.stack([_as_rgb(f).astype(np.float32) for f in images])
        video = video / 127.5 - 1.0  # TAPIR expects [-1, 1]
        video_t = torch.from_numpy(video)[None].to(self._device)
        # TAPIR queries are (t, y, x), all anchored at the first frame.
        points = np.array([[0.0, y, x] for x, y in queries], dtype=np.float32)
        points_t = torch.from_numpy(points)[None].to(self._device)
        with torch.no_grad():
            outputs = self._tapir(video_t, points_t)
        tracks = outputs["tracks"][0].cpu().numpy()  # (P, T, 2) as (x, y)
        occluded = torch.sigmoid(outputs["occlusion"][0]).cpu().numpy()  # (P, T)
        num_frames = len(images)
        positions = [
            [[float(tracks[p, t, 0]), float(tracks[p, t, 1])] for p in range(len(queries))]
            for t in range(num_frames)
        ]
        visible = [
            [bool(1.0 - occluded[p, t] > 0.5) for p in range(len(queries))]
            for t in range(num_frames)
        ]
        return positions, visible

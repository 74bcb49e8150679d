"""Run a frozen vision backbone over an image folder and emit a feature CSV.

The folder layout is one subdirectory per class; rows come out in sorted
path order so repeated exports of an unchanged folder are byte-identical.
The CSV schema (``f0..f511,label``) matches the feature-vector ingestion
path of the training package.
"""

import csv
import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from PIL import Image
from torchvision import models, transforms

FEATURE_WIDTH = 512
BACKBONE = "resnet18"

# shorter side to 256, then a 224 center crop: the standard inference
# policy for this backbone family
_PREPROCESS = transforms.Compose([
    transforms.Resize(256),
    transforms.CenterCrop(224),
    transforms.ToTensor(),
    transforms.Normalize(mean=[0.485, 0.456, 0.406],
                         std=[0.229, 0.224, 0.225]),
])


@dataclass
class ExportManifest:
    backbone: str
    feature_width: int
    image_count: int
    class_names: list[str]
    checksum: str
    skipped: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _backbone(pretrained: bool, seed: int) -> torch.nn.Module:
    """Backbone truncated after global pooling; output width 512."""
    if pretrained:
        weights = models.ResNet18_Weights.IMAGENET1K_V1
        net = models.resnet18(weights=weights)
    else:
        # seeded random init keeps offline exports deterministic
        torch.manual_seed(seed)
        net = models.resnet18(weights=None)
    trunk = torch.nn.Sequential(*list(net.children())[:-1])
    trunk.eval()
    for p in trunk.parameters():
        p.requires_grad_(False)
    return trunk


def _class_folders(image_root: Path) -> list[Path]:
    if not image_root.is_dir():
        raise ValueError(f"image root {image_root} is not a directory")
    folders = sorted(p for p in image_root.iterdir() if p.is_dir())
    if not folders:
        raise ValueError(f"image root {image_root} has no class subfolders")
    return folders


def _load_rgb(path: Path) -> torch.Tensor:
    with Image.open(path) as img:
        return _PREPROCESS(img.convert("RGB"))


def export(image_root, output_csv, *, pretrained: bool = True, seed: int = 0,
           batch_size: int = 16) -> ExportManifest:
    """Write ``f0..f511,label`` rows for every readable image under
    ``image_root`` and a JSON manifest alongside the CSV.

    Unreadable files are skipped with a warning and recorded in the
    manifest rather than aborting the export.
    """
    image_root = Path(image_root)
    output_csv = Path(output_csv)
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    folders = _class_folders(image_root)
    class_names = [p.name for p in folders]

    trunk = _backbone(pretrained, seed)
    skipped: list[str] = []
    rows = 0
    output_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(output_csv, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(FEATURE_WIDTH)] + ["label"])
        for label, folder in enumerate(folders):
            paths = sorted(p for p in folder.iterdir() if p.is_file())
            batch: list[torch.Tensor] = []

            def flush(batch: list[torch.Tensor]) -> int:
                if not batch:
                    return 0
                with torch.no_grad():
                    feats = trunk(torch.stack(batch)).flatten(1)
                for row in feats.numpy():
                    writer.writerow([repr(float(v)) for v in row] + [label])
                return len(batch)

            for path in paths:
                try:
                    batch.append(_load_rgb(path))
                except (OSError, ValueError) as exc:
                    rel = str(path.relative_to(image_root))
                    warnings.warn(f"skipping unreadable image {rel}: {exc}")
                    skipped.append(rel)
                    continue
                if len(batch) == batch_size:
                    rows += flush(batch)
                    batch = []
            rows += flush(batch)

    checksum = hashlib.sha256(output_csv.read_bytes()).hexdigest()
    manifest = ExportManifest(
        backbone=BACKBONE,
        feature_width=FEATURE_WIDTH,
        image_count=rows,
        class_names=class_names,
        checksum=checksum,
        skipped=skipped,
    )
    manifest_path = output_csv.with_suffix(".manifest.json")
    manifest_path.write_text(manifest.to_json() + "\n")
    return manifest

"""Convert a torchvision VGG16 checkpoint to the features-only state dict.

    python scripts/import_vgg_weights.py vgg16-397923af.pth vgg16_features.pt
    export KEYFRAME_STYLIZE_VGG_WEIGHTS=$PWD/vgg16_features.pt

The input is the ``torchvision.models.vgg16`` ImageNet state dict; classifier
weights are dropped. The result is checked by loading it into the extractor.
"""

import argparse
import sys

import torch

from keyframe_stylize.perceptual import VGGExtractor


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("src")
    ap.add_argument("dst")
    args = ap.parse_args(argv)
    state = torch.load(args.src, map_location="cpu", weights_only=True)
    if "state_dict" in state:
        state = state["state_dict"]
    feats = {k.removeprefix("features."): v.float() for k, v in state.items() if k.startswith("features.")}
    if not feats:
        sys.exit(f"{args.src}: no 'features.*' tensors found")
    ext = VGGExtractor(weights=feats)
    torch.save(feats, args.dst)
    print(f"wrote {len(feats)} tensors to {args.dst} (extractor digest {ext.digest()[:16]})")


if __name__ == "__main__":
    main()

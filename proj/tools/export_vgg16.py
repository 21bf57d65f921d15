# Copyright Contributors to the INS Project
# SPDX-License-Identifier: Apache-2.0
"""Exports torchvision's pretrained VGG-16 features to the npz container the
C++ backbone loader reads.

Usage:
    python tools/export_vgg16.py [--out $INS_WEIGHTS_DIR/vgg16.npz]

Only the convolutions up to relu4_3 are exported (the losses never touch
block 5 or the classifier). Arrays are float32, named conv{i}_{j}.weight /
conv{i}_{j}.bias with shapes [Cout, Cin, 3, 3] / [Cout]. The archive must be
uncompressed (numpy.savez), which is what this script produces.
"""

import argparse
import os

import numpy as np


# torchvision vgg16 `features` indices for each named convolution.
LAYERS = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14,
    "conv4_1": 17, "conv4_2": 19, "conv4_3": 21,
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    default_out = os.path.join(os.environ.get("INS_WEIGHTS_DIR", "."), "vgg16.npz")
    parser.add_argument("--out", default=default_out, help="output npz path")
    args = parser.parse_args()

    import torchvision  # deferred: only needed for the export

    model = torchvision.models.vgg16(weights=torchvision.models.VGG16_Weights.IMAGENET1K_V1)
    state = model.features.state_dict()

    arrays = {}
    for name, idx in LAYERS.items():
        arrays[f"{name}.weight"] = state[f"{idx}.weight"].numpy().astype(np.float32)
        arrays[f"{name}.bias"] = state[f"{idx}.bias"].numpy().astype(np.float32)

    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    np.savez(args.out, **arrays)
    total = sum(a.size for a in arrays.values())
    print(f"wrote {args.out} ({len(arrays)} arrays, {total:,} parameters)")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Feature command for the resnet/vggnet backbones.

Usage: torchvision_backbone.py [--arch resnet152|vgg16] [--weights FILE] IMAGE OUT.afgr

Writes the last convolutional map (7x7 positions) of a 224x224 input as an
AFGR grid: magic, u32 version, u32 L, u32 D, float32 L*D row-major.
"""
import argparse
import struct
import sys

import numpy as np
import torch
import torchvision
from PIL import Image


def build(arch, weights):
    if arch == "resnet152":
        net = torchvision.models.resnet152(weights=None)
        trunk = torch.nn.Sequential(*list(net.children())[:-2])
    elif arch == "vgg16":
        net = torchvision.models.vgg16(weights=None)
        trunk = net.features
    else:
        raise SystemExit(f"unknown arch {arch}")
    if weights:
        net.load_state_dict(torch.load(weights, map_location="cpu"))
    else:
        print("warning: no --weights given, features come from random weights", file=sys.stderr)
    return trunk.eval()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--arch", default="resnet152")
    ap.add_argument("--weights")
    ap.add_argument("image")
    ap.add_argument("out")
    args = ap.parse_args()

    tf = torchvision.transforms.Compose([
        torchvision.transforms.Resize((224, 224)),
        torchvision.transforms.ToTensor(),
        torchvision.transforms.Normalize([0.485, 0.456, 0.406], [0.229, 0.224, 0.225]),
    ])
    x = tf(Image.open(args.image).convert("RGB")).unsqueeze(0)
    with torch.no_grad():
        fmap = build(args.arch, args.weights)(x)[0]  # D x 7 x 7
    if args.arch == "vgg16":
        fmap = torch.nn.functional.adaptive_avg_pool2d(fmap, 7)
    d = fmap.shape[0]
    grid = fmap.reshape(d, -1).T.contiguous().numpy().astype("<f4")
    with open(args.out, "wb") as f:
        f.write(b"AFGR" + struct.pack("<III", 1, grid.shape[0], d))
        f.write(grid.tobytes())


if __name__ == "__main__":
    main()

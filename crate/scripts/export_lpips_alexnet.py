"""Export LPIPS (AlexNet, v0.1) weights to a safetensors file for rgbt.

Needs network access to download.pytorch.org (torchvision AlexNet weights)
and the `lpips` and `safetensors` Python packages:

    pip install lpips safetensors
    python scripts/export_lpips_alexnet.py lpips_alex.safetensors

Then pass `--lpips-backbone pretrained --lpips-weights lpips_alex.safetensors`.
"""

import argparse

import lpips
import torch
from safetensors.torch import save_file

FEATURE_INDICES = [0, 3, 6, 8, 10]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("out", help="output .safetensors path")
    args = parser.parse_args()

    model = lpips.LPIPS(net="alex", version="0.1", verbose=False).eval()
    features = model.net.slice1, model.net.slice2, model.net.slice3, model.net.slice4, model.net.slice5
    convs = {}
    for block in features:
        for name, module in block.named_children():
            if isinstance(module, torch.nn.Conv2d):
                convs[int(name)] = module
    tensors = {}
    for idx in FEATURE_INDICES:
        tensors[f"features.{idx}.weight"] = convs[idx].weight.detach().float().contiguous()
        tensors[f"features.{idx}.bias"] = convs[idx].bias.detach().float().contiguous()
    for i, lin in enumerate(model.lins):
        tensors[f"lin{i}.weight"] = lin.model[-1].weight.detach().float().reshape(-1).contiguous()
    save_file(tensors, args.out, metadata={"source": "lpips v0.1 alex"})
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()

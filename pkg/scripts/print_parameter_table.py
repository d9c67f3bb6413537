#!/usr/bin/env python3
"""Print the per-stage transformed-volume table for the VGG16 preset."""

from winosim.model import vgg16_table_layers, volumes


def main():
    print(f"{'stage':<8} {'H':>4} {'C':>4} {'K':>4} {'neurons':>12} {'weights':>10}")
    for layer in vgg16_table_layers():
        d_wi, _, d_wk = volumes(layer, 2)
        print(f"{layer.name:<8} {layer.H:>4} {layer.C:>4} {layer.K:>4} {d_wi:>12,} {d_wk:>10,}")


if __name__ == "__main__":
    main()

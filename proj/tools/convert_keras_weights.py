#!/usr/bin/env python3
"""Convert Keras application backbones into .rtck archives and record
golden feature vectors for the native implementation.

    convert_keras_weights.py convert VGG16 --weights imagenet -o weights/VGG16.rtck
    convert_keras_weights.py golden --out-dir build/golden --weights random --seed 3

Exits with status 77 when TensorFlow is not importable.
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np

MODELS = ("VGG16", "ResNet50V2", "EfficientNetB0")
MAGIC = b"RTCK"
VERSION = 1


def _keras():
    try:
        import keras  # noqa: F401
        import tensorflow  # noqa: F401
    except Exception as exc:  # pragma: no cover - environment dependent
        print(f"tensorflow unavailable: {exc}", file=sys.stderr)
        sys.exit(77)
    import keras
    return keras


def build(name, weights, seed):
    keras = _keras()
    keras.utils.set_random_seed(seed)
    ctor = getattr(keras.applications, name)
    model = ctor(include_top=False, weights=weights, input_shape=(224, 224, 3), pooling="avg")
    return keras, model


def perturb_batch_norm(keras, model, seed):
    # Fresh Keras BN layers are identities; random statistics make the check bite.
    rng = np.random.default_rng(seed)
    for layer in model.layers:
        if isinstance(layer, keras.layers.BatchNormalization):
            gamma, beta, mean, var = layer.get_weights()
            layer.set_weights([
                rng.uniform(0.5, 1.5, gamma.shape).astype(np.float32),
                rng.uniform(-0.2, 0.2, beta.shape).astype(np.float32),
                rng.uniform(-0.2, 0.2, mean.shape).astype(np.float32),
                rng.uniform(0.5, 1.5, var.shape).astype(np.float32),
            ])


def named_arrays(keras, model):
    L = keras.layers
    arrays = []
    order = []
    for layer in model.layers:
        w = layer.get_weights()
        if isinstance(layer, L.DepthwiseConv2D):
            pairs = [("kernel", w[0])] + ([("bias", w[1])] if len(w) > 1 else [])
        elif isinstance(layer, L.Conv2D):
            pairs = [("kernel", w[0])] + ([("bias", w[1])] if len(w) > 1 else [])
        elif isinstance(layer, L.BatchNormalization):
            pairs = list(zip(("gamma", "beta", "moving_mean", "moving_variance"), w))
        elif isinstance(layer, L.Normalization):
            pairs = [("mean", np.ravel(w[0])), ("variance", np.ravel(w[1]))]
        elif isinstance(layer, L.Rescaling) and layer.name == "rescaling_1":
            pairs = [("scale", np.ravel(np.asarray(layer.scale, dtype=np.float32)))]
        else:
            if w:
                raise SystemExit(f"unhandled layer with weights: {layer.name} ({type(layer).__name__})")
            continue
        order.append(layer.name)
        for role, value in pairs:
            arrays.append((f"{layer.name}/{role}", np.ascontiguousarray(value, dtype="<f4")))
    return order, arrays


def write_archive(path, backbone, order, arrays, meta):
    header = {"backbone": backbone, "layer_order": order, "meta": meta, "arrays": []}
    offset = 0
    for name, value in arrays:
        nbytes = value.nbytes
        header["arrays"].append({"name": name, "shape": list(value.shape), "dtype": "float32",
                                 "offset": offset, "nbytes": nbytes})
        offset += nbytes
    text = json.dumps(header, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        for _, value in arrays:
            f.write(value.tobytes())


def convert(name, weights, seed, out):
    keras, model = build(name, None if weights == "random" else weights, seed)
    if weights == "random":
        perturb_batch_norm(keras, model, seed)
    order, arrays = named_arrays(keras, model)
    write_archive(out, name, order, arrays,
                  {"source": "keras.applications", "weights": weights, "seed": seed,
                   "keras": keras.__version__})
    return keras, model


def features(keras, name, model, image_u8):
    module = {"VGG16": keras.applications.vgg16,
              "ResNet50V2": keras.applications.resnet_v2,
              "EfficientNetB0": keras.applications.efficientnet}[name]
    x = module.preprocess_input(image_u8.astype(np.float32)[None].copy())
    return np.asarray(model(x, training=False))[0].astype(np.float32)


def write_golden(out_dir, stem, name, vec, input_desc, archive):
    out_dir = Path(out_dir)
    (out_dir / f"{stem}.bin").write_bytes(np.ascontiguousarray(vec, dtype="<f4").tobytes())
    (out_dir / f"{stem}.json").write_text(json.dumps({
        "backbone": name, "feature_dim": int(vec.shape[0]), "dtype": "float32",
        "input": input_desc, "archive": archive, "pooling": "global_average"}, indent=2) + "\n")


def golden(out_dir, weights, seed, models):
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    seeded = rng.integers(0, 256, size=(224, 224, 3), dtype=np.uint8)
    Image.fromarray(seeded).save(out_dir / "input_seeded.png")
    entries = []
    for name in models:
        archive = f"{name}.rtck"
        keras, model = convert(name, weights, seed, out_dir / archive)
        for tag, img in (("zero", np.zeros((224, 224, 3), np.uint8)), ("seeded", seeded)):
            stem = f"{name}_{tag}"
            vec = features(keras, name, model, img)
            write_golden(out_dir, stem, name, vec,
                         "zero" if tag == "zero" else "input_seeded.png", archive)
            entries.append(stem)
        print(f"{name}: wrote {archive} and goldens", file=sys.stderr)
    (out_dir / "manifest.json").write_text(json.dumps({"goldens": entries}, indent=2) + "\n")


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="cmd", required=True)

    c = sub.add_parser("convert", help="write one backbone archive")
    c.add_argument("model", choices=MODELS)
    c.add_argument("--weights", default="imagenet",
                   help="'imagenet', 'random' or a path to a Keras weights file")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("-o", "--out", required=True)

    g = sub.add_parser("golden", help="archives plus reference features for the native check")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--weights", default="random")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--models", nargs="+", default=list(MODELS), choices=MODELS)

    args = p.parse_args()
    if args.cmd == "convert":
        convert(args.model, args.weights, args.seed, args.out)
    else:
        golden(args.out_dir, args.weights, args.seed, args.models)


if __name__ == "__main__":
    main()

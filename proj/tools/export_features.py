#!/usr/bin/env python3
"""Export pretrained encoder features into a memodetector feature store.

Runs the vision encoder over every manifest image and the text encoder over
every meme text and cached enhancement text, writing one .bin per input:

    <store>/store.json
    <store>/visual/<sha256 of image file bytes>.bin
    <store>/textual/<sha256 of utf-8 text>.bin

Each .bin is "MDFS", u32 version 1, u32 rows, u32 dim, then rows*dim float32,
little-endian. Special tokens ([CLS], <s>, </s>) are dropped so every row is a
content position.
"""

import argparse
import hashlib
import json
import struct
import sys
from pathlib import Path

import numpy as np


def write_features(path: Path, rows: np.ndarray) -> None:
    rows = np.ascontiguousarray(rows, dtype="<f4")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"MDFS")
        f.write(struct.pack("<III", 1, rows.shape[0], rows.shape[1]))
        f.write(rows.tobytes())


def read_manifest(path: Path):
    memes = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            if rec.get("kind") == "meme":
                image = Path(rec["image"])
                memes.append((path.parent / image if not image.is_absolute() else image, rec.get("text", "")))
    return memes


def cached_texts(path: Path):
    texts = []
    if path and path.exists():
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    texts.append(json.loads(line)["text"])
    return texts


def load_models(vision_id, text_id, device):
    from transformers import AutoImageProcessor, AutoModel, AutoTokenizer

    vision = AutoModel.from_pretrained(vision_id).to(device).eval()
    text = AutoModel.from_pretrained(text_id).to(device).eval()
    return AutoImageProcessor.from_pretrained(vision_id), vision, AutoTokenizer.from_pretrained(text_id), text


def encode_image(processor, model, path: Path, device):
    import torch
    from PIL import Image

    with Image.open(path) as im:
        pixels = processor(images=im.convert("RGB"), return_tensors="pt")["pixel_values"].to(device)
    with torch.no_grad():
        hidden = model(pixel_values=pixels).last_hidden_state[0]
    return hidden[1:].cpu().numpy()  # drop [CLS]


def encode_text(tokenizer, model, text: str, device):
    import torch

    batch = tokenizer(text, return_tensors="pt", truncation=True, return_special_tokens_mask=True)
    special = batch.pop("special_tokens_mask")[0].bool()
    batch = {k: v.to(device) for k, v in batch.items()}
    with torch.no_grad():
        hidden = model(**batch).last_hidden_state[0].cpu()
    return hidden[~special].numpy()


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--manifest", required=True, type=Path)
    ap.add_argument("--cache", type=Path, help="enhancement cache whose texts are encoded too")
    ap.add_argument("--store", required=True, type=Path)
    ap.add_argument("--vision-id", default="google/vit-base-patch16-224-in21k")
    ap.add_argument("--text-id", default="FacebookAI/xlm-roberta-base")
    ap.add_argument("--device", default="cpu")
    args = ap.parse_args(argv)

    processor, vision, tokenizer, text_model = load_models(args.vision_id, args.text_id, args.device)
    memes = read_manifest(args.manifest)
    texts = {t for _, t in memes if t} | {t for t in cached_texts(args.cache) if t}

    size = dict(processor.size) if isinstance(processor.size, dict) else vars(processor.size)
    image_size = int(size.get("height") or size.get("shortest_edge") or 224)
    info = {
        "vision_id": args.vision_id,
        "text_id": args.text_id,
        "visual_dim": vision.config.hidden_size,
        "text_dim": text_model.config.hidden_size,
        "image_size": image_size,
    }
    args.store.mkdir(parents=True, exist_ok=True)
    (args.store / "store.json").write_text(json.dumps(info, indent=2) + "\n")

    written = 0
    for image, _ in memes:
        key = hashlib.sha256(image.read_bytes()).hexdigest()
        out = args.store / "visual" / f"{key}.bin"
        if not out.exists():
            write_features(out, encode_image(processor, vision, image, args.device))
            written += 1
    for t in sorted(texts):
        out = args.store / "textual" / f"{hashlib.sha256(t.encode('utf-8')).hexdigest()}.bin"
        if not out.exists():
            write_features(out, encode_text(tokenizer, text_model, t, args.device))
            written += 1
    print(f"{len(memes)} images, {len(texts)} texts, {written} files written to {args.store}")


if __name__ == "__main__":
    sys.exit(main())

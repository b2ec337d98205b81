#!/usr/bin/env python3
"""Write reference fixtures for a pretrained BERT checkpoint.

    python3 scripts/gen_reference_fixtures.py --model bert-base-uncased --out fixtures/bert-base-uncased

`--model` is a Hugging Face model id or a local directory. The output
directory gets tokenization_golden.json, hidden/<id>/ fixtures at layers
0, 8 and 9, plus model.safetensors, vocab.txt and config.json so it can be
used directly as AFN_MODEL / AFN_VOCAB / AFN_CONFIG / AFN_FIXTURES.

Requires torch, transformers and safetensors.
"""

import argparse
import csv
import json
import os
import shutil

import torch
import transformers
from safetensors.torch import save_file
from transformers import BertModel
from transformers.models.bert.tokenization_bert_legacy import BertTokenizerLegacy

QUESTION = "Who is the prime minister of Canada?"
WEATHER = "The weather is nice today."
PROMPTS = ["Summarize", "Translate to French", "Summarize the sentence", "Classify sentiment"]
TEXTS = [
    QUESTION,
    "Who is the president of France?",
    "Who is the president of Canada?",
    "Enjoying a beautiful day at the park!",
    "Enjoying a beautiful walk at the beach!",
    WEATHER,
    "The story unfolds slowly, like a quiet river.",
] + [f"{p} {WEATHER}" for p in PROMPTS]
LAYERS = [0, 8, 9]


def write_hidden(out, fixture_id, text, tok, model, generator):
    enc = tok(text, return_tensors="pt")
    with torch.no_grad():
        states = model(**enc, output_hidden_states=True).hidden_states
    ids = enc["input_ids"][0].tolist()
    tokens = tok.convert_ids_to_tokens(ids)
    fdir = os.path.join(out, "hidden", fixture_id)
    os.makedirs(fdir, exist_ok=True)
    layers, norm_rows = [], []
    for layer in LAYERS:
        if layer >= len(states):
            continue
        mat = states[layer][0].to(torch.float32).contiguous()
        fname = f"layer_{layer:02d}.f32"
        with open(os.path.join(fdir, fname), "wb") as f:
            f.write(mat.numpy().astype("<f4").tobytes())
        layers.append({"layer": layer, "file": fname, "rows": mat.shape[0], "cols": mat.shape[1]})
        norms = torch.linalg.vector_norm(mat.double(), dim=-1).tolist()
        norm_rows += [[layer, i, t, f"{n:.9f}"] for i, (t, n) in enumerate(zip(tokens, norms))]
    with open(os.path.join(fdir, "norms.csv"), "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", "index", "token", "norm"])
        w.writerows(norm_rows)
    with open(os.path.join(fdir, "meta.json"), "w", encoding="utf-8") as f:
        json.dump({
            "format_version": 1,
            "id": fixture_id,
            "text": text,
            "tokens": tokens,
            "ids": ids,
            "layers": layers,
            "generator": generator,
        }, f, ensure_ascii=False, indent=1)
    return states


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="bert-base-uncased")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    model = BertModel.from_pretrained(args.model, add_pooling_layer=False)
    model.eval()
    vocab_src = os.path.join(args.model, "vocab.txt")
    if not os.path.isfile(vocab_src):
        from huggingface_hub import hf_hub_download
        vocab_src = hf_hub_download(args.model, "vocab.txt")
    vocab = os.path.join(args.out, "vocab.txt")
    if os.path.abspath(vocab_src) != os.path.abspath(vocab):
        shutil.copyfile(vocab_src, vocab)
    tok = BertTokenizerLegacy(vocab_file=vocab, do_lower_case=True)

    state = {k: v.contiguous() for k, v in model.state_dict().items()}
    save_file(state, os.path.join(args.out, "model.safetensors"))
    model.config.to_json_file(os.path.join(args.out, "config.json"))

    generator = {
        "model": args.model,
        "transformers": transformers.__version__,
        "torch": torch.__version__,
        "tokenizer": "BertTokenizerLegacy(do_lower_case=True)",
    }
    cases = []
    for text in TEXTS:
        ids = tok(text)["input_ids"]
        cases.append({"text": text, "tokens": tok.convert_ids_to_tokens(ids), "ids": ids})
    with open(os.path.join(args.out, "tokenization_golden.json"), "w", encoding="utf-8") as f:
        json.dump({"format_version": 1, "generator": generator, "encode": cases}, f, ensure_ascii=False, indent=1)

    pair = []
    for i, text in enumerate(TEXTS):
        states = write_hidden(args.out, f"r{i:02d}", text, tok, model, generator)
        if text.startswith("Enjoying"):
            pair.append(states[8][0].double() if len(states) > 8 else None)
    if all(p is not None for p in pair) and pair[0].shape == pair[1].shape:
        deltas = torch.linalg.vector_norm(pair[0] - pair[1], dim=-1)
        with open(os.path.join(args.out, "pair_shift.json"), "w", encoding="utf-8") as f:
            json.dump({
                "layer": 8,
                "deltas": [round(d, 6) for d in deltas.tolist()],
                "total_shift": round(deltas.sum().item(), 6),
                "published_total_shift": 73.5852,
                "generator": generator,
            }, f, indent=1)


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Regenerate the tiny-model golden fixtures under crates/afn/tests/fixtures/tiny.

Builds a small synthetic WordPiece vocabulary, a randomly initialised
2-layer BERT (hidden 8, 2 heads) and records what the Hugging Face
reference implementation produces for it: token/id sequences, wordpiece
splits and per-layer hidden states.

    python3 scripts/gen_tiny_fixtures.py

Requires torch, transformers and safetensors.
"""

import csv
import json
import os
import sys

import torch
import transformers
from tokenizers import BertWordPieceTokenizer
from transformers import BertConfig, BertModel
from transformers.models.bert.tokenization_bert_legacy import BertTokenizerLegacy

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
OUT = os.path.join(ROOT, "crates", "afn", "tests", "fixtures", "tiny")
CORPUS = os.path.join(ROOT, "data", "sample_corpus.txt")

SPECIALS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
# Words left out of the vocabulary so they have to be split into pieces.
HELD_OUT = {"unfolds", "connoisseur", "nonchalant", "disappointing", "breathtaking", "happily"}
PIECES = [
    "un", "##fold", "##s", "con", "##no", "##is", "##seur", "non", "##chal", "##ant",
    "disappoint", "##ing", "breath", "##taking", "happy", "##ily", "cafe", "au", "lait",
    "naive", "resume", "sum", "##mar", "##ize", "trans", "##late", "class", "##ify",
    "##ment", "senti", "french", "sentence", "the", "to",
]
PROMPTS = ["Summarize", "Translate to French", "Summarize the sentence", "Classify sentiment"]

EXTRA_TEXTS = [
    "",
    "Café-au-lait",
    "Naïve résumé",
    "  multiple   spaces\tand\nnewlines ",
    "中文字符 mixed",
    "emoji 😀 here",
    "control\x00char�gone",
    "ÀÉÎÕÜ",
    "don't stop-believing...",
    "ΣΊΣΥΦΟΣ",
    "İstanbul",
    "a" * 101,
    "xyz@#$%^&*()",
    "before after",
    "unfolds connoisseur nonchalant",
    "UNFOLDS",
    "tab nbsp　ideographic",
    "¿Qué? ¡Sí!",
    "100% of 3.14",
    "́leading combining mark",
]

WORDPIECE_WORDS = [
    "unfolds", "connoisseur", "nonchalant", "disappointing", "breathtaking", "happily",
    "the", "summarize", "zzz", "a" * 100, "a" * 101, "qx", "classify", "sentiment",
    "translate", "unfold", "s", "##", "cafe",
]


def basic_words(tok, text):
    return tok.basic_tokenizer.tokenize(text)


def build_vocab(texts):
    bootstrap = BertTokenizerLegacy(vocab_file=write_vocab(SPECIALS), do_lower_case=True)
    words = []
    seen = set()
    for text in texts:
        for w in basic_words(bootstrap, text):
            if w in seen or w in HELD_OUT:
                continue
            if len(w) == 1 or len(w) > 20:
                continue
            if not all(c.isascii() for c in w):
                continue
            seen.add(w)
            words.append(w)
    vocab = list(SPECIALS)
    singles = [chr(c) for c in range(33, 127) if not chr(c).isupper()]
    vocab += singles
    vocab += ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"]
    for p in PIECES:
        if p not in vocab:
            vocab.append(p)
    for w in words:
        if w not in vocab:
            vocab.append(w)
    return vocab


def write_vocab(tokens, path=None):
    path = path or os.path.join("/tmp", "afn_bootstrap_vocab.txt")
    with open(path, "w", encoding="utf-8") as f:
        for t in tokens:
            f.write(t + "\n")
    return path


def main():
    os.makedirs(OUT, exist_ok=True)
    with open(CORPUS, encoding="utf-8") as f:
        corpus = [line.strip() for line in f if line.strip()]
    prompt_texts = [f"{p} The weather is nice today." for p in PROMPTS]
    all_texts = corpus + prompt_texts + EXTRA_TEXTS

    vocab = build_vocab(corpus + prompt_texts)
    vocab_path = write_vocab(vocab, os.path.join(OUT, "vocab.txt"))

    slow = BertTokenizerLegacy(vocab_file=vocab_path, do_lower_case=True)
    fast = BertWordPieceTokenizer(vocab_path, lowercase=True)

    tok_cases = []
    for text in all_texts:
        enc = slow(text, add_special_tokens=True)
        ids = enc["input_ids"]
        tokens = slow.convert_ids_to_tokens(ids)
        fast_ids = fast.encode(text).ids
        tok_cases.append({
            "text": text,
            "words": basic_words(slow, text),
            "tokens": tokens,
            "ids": ids,
            "fast_agrees": fast_ids == ids,
        })
    wp_cases = [
        {"word": w, "pieces": slow.wordpiece_tokenizer.tokenize(w)} for w in WORDPIECE_WORDS
    ]
    with open(os.path.join(OUT, "tokenization_golden.json"), "w", encoding="utf-8") as f:
        json.dump({
            "format_version": 1,
            "generator": {
                "transformers": transformers.__version__,
                "tokenizer": "BertTokenizerLegacy(do_lower_case=True)",
            },
            "encode": tok_cases,
            "wordpiece": wp_cases,
        }, f, ensure_ascii=False, indent=1)

    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=8,
        num_hidden_layers=2,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
        type_vocab_size=2,
        initializer_range=0.3,
        layer_norm_eps=1e-12,
        hidden_act="gelu",
    )
    model = BertModel(config, add_pooling_layer=False)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, torch.nn.LayerNorm):
                module.weight.copy_(1.0 + 0.2 * torch.randn_like(module.weight))
                module.bias.copy_(0.1 * torch.randn_like(module.bias))
            if isinstance(module, torch.nn.Linear):
                module.bias.copy_(0.1 * torch.randn_like(module.bias))
    model.eval()
    model.save_pretrained(OUT, safe_serialization=True)

    hidden_dir = os.path.join(OUT, "hidden")
    os.makedirs(hidden_dir, exist_ok=True)
    for i, text in enumerate(corpus + prompt_texts):
        fixture_id = f"s{i:02d}"
        enc = slow(text, return_tensors="pt")
        with torch.no_grad():
            out = model(**enc, output_hidden_states=True)
        ids = enc["input_ids"][0].tolist()
        tokens = slow.convert_ids_to_tokens(ids)
        fdir = os.path.join(hidden_dir, fixture_id)
        os.makedirs(fdir, exist_ok=True)
        layers = []
        norm_rows = []
        for layer, hs in enumerate(out.hidden_states):
            mat = hs[0].to(torch.float32).contiguous()
            fname = f"layer_{layer:02d}.f32"
            with open(os.path.join(fdir, fname), "wb") as f:
                f.write(mat.numpy().astype("<f4").tobytes())
            layers.append({"layer": layer, "file": fname, "rows": mat.shape[0], "cols": mat.shape[1]})
            norms = torch.linalg.vector_norm(mat.double(), dim=-1).tolist()
            for idx, (t, n) in enumerate(zip(tokens, norms)):
                norm_rows.append([layer, idx, t, f"{n:.9f}"])
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
                "generator": {
                    "transformers": transformers.__version__,
                    "torch": torch.__version__,
                    "model": "tiny-random-bert (seed 0, 2 layers, hidden 8, 2 heads)",
                },
            }, f, ensure_ascii=False, indent=1)
    print(f"wrote fixtures to {OUT}", file=sys.stderr)


if __name__ == "__main__":
    main()

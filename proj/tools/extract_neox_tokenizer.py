#!/usr/bin/env python3
"""Write vocab.json + merges.txt for the GPT-NeoX-20B tokenizer from a HF tokenizer.json.

Added tokens that are not part of the BPE model (the whitespace runs at ids 50254..50276
in NeoX-20B) go to added_tokens.json, the HF slow-tokenizer format. Several of them share
their byte string with a BPE token, so they cannot live in vocab.json. Added tokens with
an id at or above --max-id (e.g. the PII markers some redistributions append) are dropped.
"""
import argparse
import json

def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("tokenizer_json")
    ap.add_argument("out_dir")
    ap.add_argument("--max-id", type=int, default=50277)
    args = ap.parse_args()

    with open(args.tokenizer_json, encoding="utf-8") as f:
        tok = json.load(f)
    vocab = dict(tok["model"]["vocab"])
    ids = sorted(vocab.values())
    if ids != list(range(len(ids))):
        raise SystemExit("BPE token ids are not dense")
    added_tokens = {}
    for added in tok["added_tokens"]:
        if added["id"] >= args.max_id or added["id"] < len(ids):
            continue
        added_tokens[added["content"]] = added["id"]
    if sorted(added_tokens.values()) != list(range(len(ids), len(ids) + len(added_tokens))):
        raise SystemExit("added token ids are not dense")

    with open(f"{args.out_dir}/vocab.json", "w", encoding="utf-8") as f:
        json.dump(vocab, f, ensure_ascii=False, separators=(",", ":"))
    with open(f"{args.out_dir}/added_tokens.json", "w", encoding="utf-8") as f:
        json.dump(added_tokens, f, ensure_ascii=False, separators=(",", ":"))
    with open(f"{args.out_dir}/merges.txt", "w", encoding="utf-8") as f:
        f.write("#version: 0.2\n")
        for m in tok["model"]["merges"]:
            f.write((m if isinstance(m, str) else " ".join(m)) + "\n")


if __name__ == "__main__":
    main()

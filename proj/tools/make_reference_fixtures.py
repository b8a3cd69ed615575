#!/usr/bin/env python3
"""Regenerate the reference fixtures under tests/fixtures/.

Everything here is produced by independent implementations (HF transformers for the
forward pass, HF tokenizers for BPE, plain Python for vocabulary scans) and frozen
as JSON so the C++ tests never call back into Python.

  python3 tools/make_reference_fixtures.py            # all fixtures
  python3 tools/make_reference_fixtures.py --golden-only DIR
      export golden logits for a real checkpoint dir (config.json, model.safetensors,
      vocab.json, merges.txt) into DIR/golden_logits.json

Requires torch, transformers, safetensors, tokenizers.
"""
import argparse
import json
import os
import random
import string

import torch
from safetensors.torch import save_file

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FIX = os.path.join(ROOT, "tests", "fixtures")

# Fixed prompts used for checkpoint parity.
PARITY_PROMPTS = [
    "Please calculate 306 + 136 =",
    "Please calculate 78 + 62 =",
    "Please calculate 78 - 62 =",
    "Please calculate 75 + 16 - 48 =",
    "Please calculate 5 + 9 =",
]


def floats(t):
    return [float(x) for x in t.reshape(-1).tolist()]


def randomize(model, seed, scale):
    """Replace HF's small default init with larger random values so the fixtures
    produce peaked, non-trivial distributions."""
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("ln_1.weight") or name.endswith("ln_2.weight") or "layernorm.weight" in name \
                    or name.endswith("ln_f.weight") or name.endswith("final_layer_norm.weight"):
                p.copy_(1.0 + 0.2 * torch.randn(p.shape, generator=g))
            elif name.endswith("bias"):
                p.copy_(0.1 * torch.randn(p.shape, generator=g))
            else:
                fan_in = p.shape[-1] if p.dim() > 1 else 1
                p.copy_(scale * torch.randn(p.shape, generator=g) / (fan_in ** 0.5))


def attention_modules(model):
    if model.config.model_type == "gpt2":
        return [blk.attn for blk in model.transformer.h]
    return [layer.attention for layer in model.gpt_neox.layers]


def run_with_attention_capture(model, ids, patch=None):
    """Returns (last-position logits, per-layer attention outputs at the last position,
    hidden_states tuple). patch = (layer_index0, vector) replaces that attention
    output at the last position."""
    captured = []
    hooks = []
    for li, mod in enumerate(attention_modules(model)):
        def hook(_m, _inp, out, li=li):
            out0 = out[0] if isinstance(out, tuple) else out
            if patch is not None and patch[0] == li:
                out0 = out0.clone()
                out0[0, -1, :] = patch[1]
                captured.append(out0[0, -1, :].clone())
                return (out0,) + tuple(out[1:]) if isinstance(out, tuple) else out0
            captured.append(out0[0, -1, :].clone())
            return None
        hooks.append(mod.register_forward_hook(hook))
    try:
        with torch.no_grad():
            res = model(torch.tensor([ids]), output_hidden_states=True)
    finally:
        for h in hooks:
            h.remove()
    return res.logits[0, -1, :], captured, res.hidden_states


def export_model_fixture(name, model, seqs, vocab_size, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    model.eval()
    model.config.save_pretrained(out_dir)
    state = {k: v.contiguous() for k, v in model.state_dict().items()}
    # Tied GPT-2 LM head is not stored, matching published checkpoints.
    state = {k: v for k, v in state.items() if k != "lm_head.weight" or not model.config.tie_word_embeddings}
    save_file(state, os.path.join(out_dir, "model.safetensors"))

    cases = []
    n_layers = model.config.num_hidden_layers
    for ids in seqs:
        logits, attn, hidden = run_with_attention_capture(model, ids)
        # hidden[k] for 1 <= k < n_layers is the residual after block k (post-MLP tap).
        post_mlp = [floats(hidden[k][0, -1, :]) for k in range(1, n_layers)]
        cases.append({
            "tokens": ids,
            "final_logits": floats(logits),
            "attention_outputs": [floats(a) for a in attn],
            "post_mlp_taps": post_mlp,
            "embedding": floats(hidden[0][0, -1, :]),
        })

    # Interchange: source's attention output at the last position replaces base's.
    interchanges = []
    base, source = seqs[3], list(seqs[3])
    source[-2] = (source[-2] + 7) % vocab_size
    _, src_attn, _ = run_with_attention_capture(model, source)
    base_logits, _, _ = run_with_attention_capture(model, base)
    base_probs = torch.softmax(base_logits.double(), -1)
    for layer0 in range(n_layers):
        patched_logits, _, _ = run_with_attention_capture(model, base, (layer0, src_attn[layer0]))
        probs = torch.softmax(patched_logits.double(), -1)
        interchanges.append({
            "layer": layer0 + 1,
            "base_tokens": base,
            "source_tokens": source,
            "patched_logits": floats(patched_logits),
            "prob_delta": floats(probs - base_probs),
        })

    with open(os.path.join(out_dir, "golden.json"), "w") as f:
        json.dump({"fixture": name, "cases": cases, "interchanges": interchanges}, f)


def make_model_fixtures():
    from transformers import GPT2Config, GPT2LMHeadModel, GPTNeoXConfig, GPTNeoXForCausalLM

    rng = random.Random(1234)
    vocab = 512
    seqs = [[rng.randrange(vocab) for _ in range(n)] for n in (1, 3, 6, 9, 14)]

    torch.manual_seed(0)
    gpt2 = GPT2LMHeadModel(GPT2Config(
        vocab_size=vocab, n_positions=32, n_embd=32, n_layer=3, n_head=4,
        activation_function="gelu_new", layer_norm_epsilon=1e-5,
        attn_implementation="eager"))
    randomize(gpt2, 11, 1.5)
    export_model_fixture("hf_gpt2_tiny", gpt2, seqs, vocab, os.path.join(FIX, "hf_gpt2_tiny"))

    torch.manual_seed(0)
    neox = GPTNeoXForCausalLM(GPTNeoXConfig(
        vocab_size=vocab, hidden_size=32, num_hidden_layers=3, num_attention_heads=4,
        intermediate_size=96, rotary_pct=0.5, rotary_emb_base=10000, max_position_embeddings=64,
        hidden_act="gelu", layer_norm_eps=1e-5, use_parallel_residual=True,
        tie_word_embeddings=False, attn_implementation="eager"))
    randomize(neox, 12, 1.5)
    export_model_fixture("hf_neox_tiny", neox, seqs, vocab, os.path.join(FIX, "hf_neox_tiny"))


def tokenizer_corpus():
    rng = random.Random(99)
    corpus = [
        "", "Please calculate 306 + 136 =", "Please calculate 75 + 16 - 48 =",
        "Please calculate 0 + 0 =", " 442", " 306", "442", "Hello world", "it's",
        "They're here, we've seen it, I'm sure he'll say she'd go.", "don't STOP'S",
        "a\n\nb", "a \n\n b", "tabs\tand\t\tmore", "trailing   ", "   leading", "x  y   z",
        "héllo wörld", "日本語のテキスト", "emoji 🤖🚀 end", "naïve café — déjà vu",
        "1234567890 12 345 6789", "3.5 +3 3rd -12", "$100.00!!", "C++20 <vector>",
        "\u00a0nbsp\u2003em\u3000x", "a\u00a0 b", "end\u2028", "\r\nwindows\r\n", "١٢٣ Arabic digits", "Ⅻ roman",
        "...???!!!", "'''", "' s", "mixed123abc456", "ΑΒΓ αβγ", "Привет мир",
    ]
    printable = string.ascii_letters + string.digits + string.punctuation + " \n\t"
    for _ in range(165):
        n = rng.randrange(1, 40)
        corpus.append("".join(rng.choice(printable) for _ in range(n)))
    return corpus


def make_tokenizer_fixtures():
    from tokenizers import ByteLevelBPETokenizer

    corpus = tokenizer_corpus()
    for name in ("gpt2", "neox"):
        d = os.path.join(ROOT, "data", name)
        tok = ByteLevelBPETokenizer(os.path.join(d, "vocab.json"), os.path.join(d, "merges.txt"))
        enc = [{"text": s, "ids": tok.encode(s).ids} for s in corpus]
        with open(os.path.join(d, "vocab.json"), encoding="utf-8") as f:
            vocab = json.load(f)
        added = {}
        if os.path.exists(os.path.join(d, "added_tokens.json")):
            with open(os.path.join(d, "added_tokens.json"), encoding="utf-8") as f:
                added = json.load(f)

        # Vocabulary scan oracle: byte-level 'Ġ' renders a leading space.
        def numerical(tok_str):
            s = tok_str[1:] if tok_str.startswith("Ġ") else tok_str
            return len(s) > 0 and all(c in "0123456789" for c in s)
        numerical_ids = sorted(i for t, i in vocab.items() if numerical(t))
        spaced = {n: vocab.get("Ġ%d" % n) for n in list(range(0, 1001)) + [9999]}
        bare = {n: vocab.get("%d" % n) for n in list(range(0, 1001)) + [9999]}
        facts = {
            "vocab_size": len(vocab) + len(added),
            "numerical_count": len(numerical_ids),
            "numerical_ids_head": numerical_ids[:50],
            "spaced_integer_ids": {str(k): v for k, v in spaced.items()},
            "bare_integer_ids": {str(k): v for k, v in bare.items()},
            "known_tokens": {t: vocab[t] for t in ("Ġ+", "Ġ-", "Ġ=", "Please", "Ġcalculate", "Ċ") if t in vocab},
        }
        with open(os.path.join(FIX, f"{name}_tokenizer.json"), "w", encoding="utf-8") as f:
            json.dump({"encodings": enc, "facts": facts}, f, ensure_ascii=False)


def export_golden(ckpt_dir):
    """Golden logits for a real checkpoint, from HF transformers (reference)."""
    from tokenizers import ByteLevelBPETokenizer
    from transformers import AutoModelForCausalLM

    tok = ByteLevelBPETokenizer(os.path.join(ckpt_dir, "vocab.json"), os.path.join(ckpt_dir, "merges.txt"))
    model = AutoModelForCausalLM.from_pretrained(ckpt_dir, torch_dtype=torch.float32)
    model.eval()
    cases = []
    for p in PARITY_PROMPTS:
        ids = tok.encode(p).ids
        with torch.no_grad():
            logits = model(torch.tensor([ids])).logits[0, -1, :]
        cases.append({"prompt": p, "tokens": ids, "final_logits": floats(logits)})
    with open(os.path.join(ckpt_dir, "golden_logits.json"), "w") as f:
        json.dump({"cases": cases}, f)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--golden-only", metavar="CKPT_DIR")
    args = ap.parse_args()
    if args.golden_only:
        export_golden(args.golden_only)
        return
    os.makedirs(FIX, exist_ok=True)
    make_model_fixtures()
    make_tokenizer_fixtures()


if __name__ == "__main__":
    main()

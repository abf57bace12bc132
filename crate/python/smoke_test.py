"""Smoke test for the tilkit_py extension.

Build and install first:
    maturin build --release -m crates/py/Cargo.toml -o dist && pip install dist/tilkit_py-*.whl
"""

import math
import os
import tempfile

import tilkit_py as tk

SENTENCES = [
    "Қазақстан Орталық Азиядағы ең үлкен мемлекет.",
    "Алматы қаласы таулардың етегінде орналасқан.",
    "Абай Құнанбайұлы қазақ әдебиетінің негізін қалаушы.",
    "Балалар мектепке күзде барады және көп нәрсе үйренеді.",
    "Дала кең, аспан ашық, жел жұмсақ соғады.",
]


def main():
    assert tk.clean_text("  á\tb\x07  c ") == "á b c"

    docs = [(f"d{i}", "smoke", s) for i, s in enumerate(SENTENCES)]
    docs.append(("dup", "smoke", SENTENCES[0]))
    docs.append(("latin", "smoke", "This line is entirely in English and should not survive."))
    kept, report = tk.clean_documents(docs, config='{"min_length_chars": 10}')
    assert [d[0] for d in kept] == [f"d{i}" for i in range(len(SENTENCES))], kept
    assert report["input_count"] == 7 and report["output_count"] == 5, report
    assert report["per_stage_rejections"]["dedup"] == 1, report

    texts = [s for _, _, s in kept] * 20
    tok = tk.Tokenizer.train(texts, vocab_size=400)
    assert 257 < tok.vocab_size <= 400
    for s in SENTENCES:
        assert tok.decode(tok.encode(s)) == s
    assert tok.eot_id == tok.vocab_size - 1
    assert tok.fertility(" ".join(SENTENCES)) >= 1.0

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "tok.json")
        tok.save(path)
        again = tk.Tokenizer.load(path)
        assert again.encode(SENTENCES[1]) == tok.encode(SENTENCES[1])

    assert tk.ModelConfig.preset("300m").count_parameters() == 325_179_392
    cfg = tk.ModelConfig.preset("tiny", vocab_size=tok.vocab_size)
    model = tk.Model(cfg, seed=7)
    blocks = tok.pack_blocks(texts, 32)
    first = model.loss(blocks[0])
    assert abs(first - math.log(tok.vocab_size)) < 0.1 * math.log(tok.vocab_size), first
    losses = model.fit(blocks[:4], peak_lr=3e-3, steps=60, batch_size=4, seed=1)
    assert len(losses) == 60 and losses[-1] < losses[0] / 2, (losses[0], losses[-1])

    prompt = "Алматы қаласы таулардың"
    good = model.score(tok, prompt, " етегінде")
    bad = model.score(tok, prompt, " мектепке")
    assert good > bad, (good, bad)

    assert tk.lr_at_step(0, 1e-3, 1000) == 0.0
    assert math.isclose(tk.lr_at_step(1000, 1e-3, 1000), 1e-4)
    assert tk.tokens_per_parameter(9e9, 3e8) == 30.0
    print("smoke test passed")


if __name__ == "__main__":
    main()

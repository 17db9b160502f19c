"""Acceptance suite: one test per release criterion, each printing PASS/FAIL.

Run with `pytest -s tests/test_acceptance.py` to see the criterion lines.
"""

import itertools
import json
import threading
import time
import urllib.error
import urllib.request

import numpy as np

from hsfuse.data import SampleRecord, split_dataset
from hsfuse.data import EmbeddingTable, read_embedding_file, write_embedding_file
from hsfuse.evaluation import hierarchical_accuracy, top_k_accuracy
from hsfuse.fusion import (
    LmfParams,
    ModalityVector,
    concat_fuse,
    lmf_fuse,
    mult_concat_fuse,
    tensor_fusion_oracle,
)
from hsfuse.model import (
    ModelConfig,
    backward,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from hsfuse.optim import TrainConfig, cross_entropy, evaluate_loss_top1, train
from hsfuse.serve import ModelService, make_server
from hsfuse.textprep import FreqDict, segment_words

from helpers import (
    bench_config,
    bench_split,
    numeric_input_grad,
    numeric_param_grad,
    random_sample,
    rel_err,
    separable_fixture,
)


def report(name: str, ok: bool, detail: str = ""):
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPTANCE] {name}: {tag}{suffix}", flush=True)
    assert ok, f"{name}{suffix}"


# 1 ------------------------------------------------------------------------------


def test_lmf_oracle_equivalence():
    started = time.monotonic()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 4))
        dims = [int(d) for d in rng.integers(1, 4, size=n)]
        rank = int(rng.integers(1, 5))
        out_dim = int(rng.integers(1, 4))
        names = [f"m{i}" for i in range(n)]
        params = LmfParams(
            factors={nm: rng.normal(size=(rank, d + 1, out_dim)) for nm, d in zip(names, dims)},
            rank=rank,
            out_dim=out_dim,
        )
        zs = [ModalityVector(nm, rng.normal(size=d)) for nm, d in zip(names, dims)]
        diff = float(np.max(np.abs(lmf_fuse(zs, params).values - tensor_fusion_oracle(zs, params))))
        worst = max(worst, diff)
    elapsed = time.monotonic() - started
    report(
        "lmf-oracle-equivalence",
        worst <= 1e-9 and elapsed < 5.0,
        f"max |diff|={worst:.3e}, {elapsed:.2f}s",
    )


# 2 ------------------------------------------------------------------------------


def test_gradient_correctness_all_methods():
    started = time.monotonic()
    worst = 0.0
    for method in ("concat", "multconcat", "lmf"):
        rng = np.random.default_rng(abs(hash(method)) % 2**32)
        for _ in range(20):
            n = int(rng.integers(1, 4)) if method != "lmf" else int(rng.integers(2, 4))
            cfg = ModelConfig(
                modalities=tuple((f"m{i}", int(rng.integers(1, 5))) for i in range(n)),
                classes=int(rng.integers(2, 5)),
                hidden=int(rng.integers(1, 5)),
                fusion=method,
                rank=int(rng.integers(1, 4)),
                lmf_dim=int(rng.integers(1, 4)),
                seed=int(rng.integers(0, 100_000)),
            )
            params = init_model(cfg)
            sample = random_sample(cfg, rng)
            label = int(rng.integers(0, cfg.classes))
            logits, cache = forward(cfg, params, sample)
            _, dlogits = cross_entropy(logits, label)
            analytic, d_inputs = backward(cfg, params, cache, dlogits)
            names, numeric = numeric_param_grad(cfg, params, sample, label, eps=1e-6)
            for k in names:
                worst = max(worst, rel_err(analytic[k], numeric[k]))
            for name, _ in cfg.modalities:
                num = numeric_input_grad(cfg, params, sample, label, name, eps=1e-6)
                worst = max(worst, rel_err(d_inputs[name], num))
    elapsed = time.monotonic() - started
    report(
        "gradient-correctness",
        worst <= 1e-6 and elapsed < 30.0,
        f"worst rel err={worst:.3e}, {elapsed:.1f}s",
    )


# 3 ------------------------------------------------------------------------------


def test_multconcat_structure_grid():
    rng = np.random.default_rng(5)
    ok = True
    for n, h in itertools.product(range(1, 5), range(1, 9)):
        outs = [rng.normal(size=h) for _ in range(n)]
        fused = mult_concat_fuse(outs).values
        ok &= fused.shape[0] == (n + 1) * h
        ok &= bool(np.array_equal(fused[: n * h], concat_fuse(outs).values))
        # zeroing any single input zeroes the trailing Z block
        for z in range(n):
            zeroed = list(outs)
            zeroed[z] = np.zeros(h)
            tail = mult_concat_fuse(zeroed).values[-h:]
            ok &= bool(np.array_equal(tail, np.zeros(h)))
    report("multconcat-structure", ok, "N in 1..4, h in 1..8, exhaustive")


# 4 ------------------------------------------------------------------------------


def test_synthetic_interaction_benchmark():
    started = time.monotonic()
    means = {}
    for fusion in ("multconcat", "concat"):
        accs = []
        for seed in range(5):
            rng = np.random.default_rng((seed, 1234))
            tr, va, te = bench_split(rng, 20), bench_split(rng, 3), bench_split(rng, 10)
            cfg = bench_config(fusion, seed)
            tcfg = TrainConfig(
                lr=0.01, epochs=100, patience=100, batch_size=32, seed=seed,
                fusion=fusion, hidden=cfg.hidden,
            )
            params, _ = train(cfg, tcfg, tr, va)
            _, top1 = evaluate_loss_top1(cfg, params, te)
            accs.append(top1)
        means[fusion] = float(np.mean(accs))
    elapsed = time.monotonic() - started
    report(
        "synthetic-interaction-benchmark",
        means["multconcat"] >= means["concat"]
        and means["multconcat"] >= 0.90
        and elapsed < 120.0,
        f"multconcat={means['multconcat']:.3f} concat={means['concat']:.3f} {elapsed:.0f}s",
    )


# 5 ------------------------------------------------------------------------------


def test_training_protocol(tmp_path):
    # monotonically worsening val loss: train pushes class 0, val wants class 1
    x = [ModalityVector("D", np.array([1.0, 0.5]))]
    tr = [(x, 0)] * 8
    va = [(x, 1)] * 4
    cfg = ModelConfig(modalities=(("D", 2),), classes=2, hidden=3, fusion="concat", seed=1)
    tcfg = TrainConfig(lr=0.05, epochs=100, patience=10, batch_size=4, seed=1)
    params, history = train(cfg, tcfg, tr, va)
    stops_exactly = (
        history.stop_reason == "early_stop"
        and history.best_epoch == 1
        and history.epochs_run == history.best_epoch + 10
    )
    val_loss, _ = evaluate_loss_top1(cfg, params, va)
    restores = abs(val_loss - history.val_loss[history.best_epoch - 1]) <= 1e-12

    # same-seed training twice produces byte-identical checkpoints
    tr2, va2 = separable_fixture()
    cfg2 = ModelConfig(modalities=(("D", 2),), classes=2, hidden=4, fusion="multconcat", seed=9)
    tcfg2 = TrainConfig(lr=1e-2, epochs=20, patience=20, batch_size=4, seed=9)
    paths = []
    for i in range(2):
        p, _ = train(cfg2, tcfg2, tr2, va2)
        path = str(tmp_path / f"run{i}.ckpt")
        save_checkpoint(p, cfg2, ["111111", "222222"], path)
        paths.append(path)
    identical = open(paths[0], "rb").read() == open(paths[1], "rb").read()
    report(
        "training-protocol",
        stops_exactly and restores and identical,
        f"epochs={history.epochs_run} restore_ok={restores} identical={identical}",
    )


# 6 ------------------------------------------------------------------------------


def _enumerate_segmentations(s, d):
    """Literal exhaustive enumeration with the stated tie rules."""
    best_key, best_tokens = None, None
    for cuts in itertools.product([False, True], repeat=max(0, len(s) - 1)):
        tokens, start = [], 0
        for i, cut in enumerate(cuts, start=1):
            if cut:
                tokens.append(s[start:i])
                start = i
        tokens.append(s[start:])
        score = 0.0
        for t in tokens:
            score += d.log_prob(t)
        key = (score, -len(tokens), tuple(len(t) for t in tokens))
        if best_key is None or key > best_key:
            best_key, best_tokens = key, tokens
    return best_tokens


def _suffix_best(s, d, memo, start):
    """Independent suffix-recursive optimum with the same tie key."""
    if start == len(s):
        return (0.0, 0, ()), ()
    if start in memo:
        return memo[start]
    best_key, best_tokens = None, None
    for end in range(start + 1, len(s) + 1):
        token = s[start:end]
        rest_key, rest_tokens = _suffix_best(s, d, memo, end)
        key = (
            d.log_prob(token) + rest_key[0],
            -1 + rest_key[1],
            (end - start,) + rest_key[2],
        )
        if best_key is None or key > best_key:
            best_key, best_tokens = key, (token,) + rest_tokens
    memo[start] = (best_key, best_tokens)
    return memo[start]


def test_topk_metric_suite():
    rng = np.random.default_rng(77)
    ok = True

    # monotone in k, and k = C reaches 1.0 on complete rankings
    for _ in range(20):
        c = int(rng.integers(2, 12))
        rankings = [list(rng.permutation(c)) for _ in range(30)]
        labels = [int(rng.integers(0, c)) for _ in range(30)]
        accs = [top_k_accuracy(rankings, labels, k, classes=c) for k in range(1, c + 1)]
        ok &= all(a <= b for a, b in zip(accs, accs[1:]))
        ok &= accs[-1] == 1.0

    # HS2 >= HS4 >= HS6 on arbitrary prediction sets
    for _ in range(20):
        codes = [f"{rng.integers(10, 99)}{rng.integers(0, 10000):04d}" for _ in range(12)]
        labels = [codes[int(rng.integers(0, 12))] for _ in range(100)]
        preds = [codes[int(rng.integers(0, 12))] for _ in range(100)]
        h2 = hierarchical_accuracy(preds, labels, 2)
        h4 = hierarchical_accuracy(preds, labels, 4)
        h6 = hierarchical_accuracy(preds, labels, 6)
        ok &= h2 >= h4 >= h6

    # segmentation optimum: every {a,b} string, enumeration oracle to length 9,
    # independent suffix-recursive oracle (validated by the enumeration) to 12
    d = FreqDict.from_counts({"a": 5, "ab": 5, "ba": 3, "aba": 2, "b": 1})
    for length in range(1, 13):
        for chars in itertools.product("ab", repeat=length):
            s = "".join(chars)
            got = segment_words(s, d)
            _, suffix_tokens = _suffix_best(s, d, {}, 0)
            ok &= got == list(suffix_tokens)
            if length <= 9:
                ok &= got == _enumerate_segmentations(s, d)
        if not ok:
            break
    report("topk-metric-suite", ok, "monotone-k, hierarchy, segmentation sweep")


# 7 ------------------------------------------------------------------------------


def test_split_sizes_full_corpus():
    records = [SampleRecord(id=f"r{i}", hs6=f"{i % 16:06d}") for i in range(2144)]
    split = split_dataset(records, ratios=(0.8, 0.1, 0.1), seed=0)
    sizes = tuple(len(split.ids(name)) for name in ("train", "val", "test"))
    report("split-sizes", sizes == (1716, 214, 214), f"sizes={sizes}")


# 8 ------------------------------------------------------------------------------


def test_round_trips_lossless(tmp_path):
    ok = True
    rng = np.random.default_rng(31)
    for fusion in ("concat", "multconcat", "lmf"):
        cfg = ModelConfig(
            modalities=(("I", 6), ("T", 4)), classes=5, hidden=5,
            fusion=fusion, rank=3, lmf_dim=4, seed=8,
        )
        params = init_model(cfg)
        vocab = [f"{i:06d}" for i in range(5)]
        path = str(tmp_path / f"{fusion}.ckpt")
        save_checkpoint(params, cfg, vocab, path)
        loaded, loaded_cfg, loaded_vocab = load_checkpoint(path)
        ok &= loaded_cfg == cfg and loaded_vocab == vocab
        for _ in range(10):
            sample = random_sample(cfg, rng)
            a, _ = forward(cfg, params, sample)
            b, _ = forward(loaded_cfg, loaded, sample)
            ok &= float(np.max(np.abs(a - b))) <= 1e-15

    table = EmbeddingTable(
        modality="I", dim=7,
        vectors={f"id{i}": rng.normal(size=7).astype(np.float32).astype(np.float64) for i in range(20)},
    )
    path = str(tmp_path / "table.emb")
    write_embedding_file(table, path)
    back = read_embedding_file(path)
    ok &= back.dim == table.dim and set(back.vectors) == set(table.vectors)
    for k in table.vectors:
        ok &= bool(np.array_equal(back.vectors[k], table.vectors[k]))
    report("round-trips-lossless", ok, "checkpoint logits <=1e-15, tables exact")


# 9 ------------------------------------------------------------------------------


def _post(base, path, payload):
    req = urllib.request.Request(
        base + path, data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"}, method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read().decode())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read().decode())


def test_serve_api_contract(tmp_path):
    cfg = ModelConfig(
        modalities=(("I", 8), ("D", 32)), classes=16, hidden=8, fusion="multconcat", seed=4
    )
    params = init_model(cfg)
    vocab = sorted(f"64{i:04d}" for i in range(16))
    log = str(tmp_path / "feedback.log")
    service = ModelService.from_model(cfg, params, vocab, feedback_log=log)
    server = make_server(service, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        ok = True
        # ordering + clamping
        status, body = _post(base, "/api/predict", {"description": "x", "image": [0.1] * 8, "k": 100})
        ok &= status == 200 and len(body["suggestions"]) == 16
        probs = [s["prob"] for s in body["suggestions"]]
        ok &= probs == sorted(probs, reverse=True)
        # 400 naming the missing modality
        status, err = _post(base, "/api/predict", {"description": "x", "k": 5})
        ok &= status == 400 and "'I'" in err["error"]
        # feedback log integrity under 50 concurrent requests
        rid = body["request_id"]
        hs6 = body["suggestions"][0]["hs6"]
        statuses = []

        def hit():
            s, _ = _post(base, "/api/feedback", {"request_id": rid, "hs6": hs6})
            statuses.append(s)

        threads = [threading.Thread(target=hit) for _ in range(50)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        ok &= statuses.count(200) == 50
        ok &= len(open(log).read().splitlines()) == 50
    finally:
        server.shutdown()
        server.server_close()
    report("serve-api-contract", ok, "ordering, clamping, 400s, 50-way feedback")

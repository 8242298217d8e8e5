"""Acceptance battery.

One test per criterion, each printing a PASS/FAIL line with the measured
values.  Every tolerance below is fixed; golden values come from the
standalone oracle implementations under ``tests/oracles``.
"""

import csv
import json
import socket
import time
from dataclasses import replace

import numpy as np
import pytest

from midas.backend import EchoServer, connect, decode_frame, encode_frame, payload_to_tensor, tensor_to_payload
from midas.channel import apply_gaussian
from midas.cli import main as cli_main
from midas.codec import save_image
from midas.corpus import synth_image
from midas.diffusion import Condition, ToyPredictor, edict_denoise, edict_invert, make_schedule
from midas.experiments import access_control_study, structure_sweep
from midas.keymech import build_random_basis, ortho_apply, ortho_inverse
from midas.metrics import psnr
from midas.pipeline import (
    StegoConfig,
    decompose_latents,
    fuse_latents,
    hide,
    hide_traced,
    reveal,
)

PROMPT = "a quiet mountain lake at dawn"


def report(name, ok, detail):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")


# ----------------------------------------------------------- 1. key algebra


@pytest.fixture(scope="module")
def key_battery():
    dims = (64, 1024, 4096)
    strengths = (0.0, 0.25, 0.5, 1.0)
    worst = {"gram": 0.0, "round": 0.0, "norm": 0.0}
    t0 = time.time()
    for d in dims:
        rng = np.random.default_rng(d)
        z = rng.standard_normal(d)
        for strength in strengths:
            for seed in range(10):
                key = build_random_basis(d, strength, seed)
                if key.block.size:
                    gram = key.block @ key.block.T
                    gram_err = float(np.abs(gram - np.eye(key.block.shape[0])).max())
                else:
                    gram_err = 0.0
                enc = ortho_apply(key, z)
                round_err = float(np.abs(ortho_inverse(key, enc) - z).max())
                norm_err = float(abs(np.linalg.norm(enc) - np.linalg.norm(z)) / np.linalg.norm(z))
                worst["gram"] = max(worst["gram"], gram_err)
                worst["round"] = max(worst["round"], round_err)
                worst["norm"] = max(worst["norm"], norm_err)
    worst["elapsed"] = time.time() - t0
    return worst


def test_key_algebra(key_battery):
    w = key_battery
    ok = w["gram"] < 1e-4 and w["round"] < 1e-5 and w["norm"] < 1e-5
    report(
        "key-algebra",
        ok,
        f"orthonormality {w['gram']:.2e} < 1e-4, round-trip {w['round']:.2e} < 1e-5, "
        f"norm {w['norm']:.2e} < 1e-5",
    )
    assert w["gram"] < 1e-4
    assert w["round"] < 1e-5
    assert w["norm"] < 1e-5


def test_key_algebra_runtime(key_battery):
    elapsed = key_battery["elapsed"]
    ok = elapsed < 30.0
    report("key-algebra-runtime", ok, f"battery took {elapsed:.1f} s, budget 30 s")
    # The numerical battery is budgeted at 30 s. A single 4096x4096 QR
    # costs ~11 s on this host's one core at peak BLAS throughput, and the
    # criterion requires ten of them, so the budget needs a multicore BLAS.
    assert elapsed < 30.0, (
        f"battery took {elapsed:.1f} s; the d=4096, strength=1 subset alone requires "
        "~110 s of QR time on a single-core host"
    )


# -------------------------------------------------------- 2. fusion inverse


def test_fusion_inverse():
    rng = np.random.default_rng(2024)
    t0 = time.time()
    worst = 0.0
    for trial in range(100):
        alpha = (0.5, 0.95, 1.0)[trial % 3]
        key = build_random_basis(1024, 0.5, 5000 + trial)
        z = rng.standard_normal((4, 16, 16))
        ref = rng.standard_normal((4, 16, 16))
        back = decompose_latents(fuse_latents(z, ref, alpha, key), ref, alpha, key)
        worst = max(worst, float(np.abs(back - z).max()))
    elapsed = time.time() - t0
    ok = worst < 1e-5 and elapsed < 5.0
    report("fusion-inverse", ok, f"max error {worst:.2e} < 1e-5 over 100 triples, {elapsed:.1f} s < 5 s")
    assert worst < 1e-5
    assert elapsed < 5.0


# -------------------------------------------------------- 3. EDICT exactness


def test_edict_exactness():
    sched = make_schedule(50, 0.7)
    pred = ToyPredictor(sched)
    window = sched.active_steps
    t0 = time.time()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(9000 + seed)
        z = rng.standard_normal((4, 16, 16))
        cond = Condition(PROMPT, rng.standard_normal((4, 16, 16)), 0.3)
        pair = edict_invert((z, z), 0, window, pred, cond, sched, mix=0.93)
        x, y = edict_denoise(pair, window, 0, pred, cond, sched, mix=0.93)
        worst = max(worst, float(np.abs(x - z).max()), float(np.abs(y - z).max()))
    elapsed = time.time() - t0
    ok = worst < 1e-4 and elapsed < 60.0
    report("edict-exactness", ok, f"max round-trip error {worst:.2e} < 1e-4, {elapsed:.1f} s < 60 s")
    assert worst < 1e-4
    assert elapsed < 60.0


# -------------------------------------------------------- 4. access control


def test_access_control(golden):
    g = golden("e2e")["access_control"]
    t0 = time.time()
    res = access_control_study(trials=20)
    elapsed = time.time() - t0
    psnr_gap = res.psnr_gap
    corr_gap = res.corr_gap
    ok = psnr_gap >= 6.0 and corr_gap >= 0.5 and elapsed < 300.0
    report(
        "access-control",
        ok,
        f"psnr gap {psnr_gap:.2f} dB >= 6 ({res.correct_psnr:.2f} vs {res.wrong_psnr:.2f}), "
        f"corr gap {corr_gap:.3f} >= 0.5, {elapsed:.0f} s < 300 s",
    )
    # cross-check against the standalone oracle run
    assert abs(res.correct_psnr - g["correct_psnr"]) < 1e-6
    assert abs(res.wrong_psnr - g["wrong_psnr"]) < 1e-6
    assert abs(res.correct_corr - g["correct_corr"]) < 1e-9
    assert abs(res.wrong_corr - g["wrong_corr"]) < 1e-9
    assert psnr_gap >= 6.0
    assert corr_gap >= 0.5
    assert elapsed < 300.0


# -------------------------------------------------- 5. structural residue


def test_structural_residue_ordering(golden):
    g = golden("e2e")["structure_sweep"]
    t0 = time.time()
    table = structure_sweep()
    elapsed = time.time() - t0
    rb, nf = table["random_basis"], table["noise_flip"]
    monotone = all(a >= b - 1e-12 for a, b in zip(rb, rb[1:])) and all(
        a >= b - 1e-12 for a, b in zip(nf, nf[1:])
    )
    dominated = all(rb[k] <= nf[k] for k in range(1, 5))
    equal_at_zero = abs(rb[0] - nf[0]) < 1e-12
    ok = monotone and dominated and equal_at_zero and elapsed < 120.0
    report(
        "structural-residue",
        ok,
        f"monotone {monotone}, random-basis<=noise-flip at K>=1 {dominated}, "
        f"equal at K=0 {equal_at_zero}, {elapsed:.0f} s < 120 s",
    )
    assert np.allclose(rb, g["random_basis"], atol=1e-9)
    assert np.allclose(nf, g["noise_flip"], atol=1e-9)
    assert monotone and dominated and equal_at_zero
    assert elapsed < 120.0


# ------------------------------------------------------------ 6. robustness


def test_robustness_protocol(golden):
    g = golden("e2e")["robustness"]
    t0 = time.time()
    clean, degraded = [], []
    for trial in range(8):
        secrets = [synth_image(1000 + 10 * trial + j) for j in range(2)]
        seeds = [20_000 + 10 * trial, 30_000 + 10 * trial]
        cfg = StegoConfig.with_defaults(seeds, 777, PROMPT)
        stego = hide(secrets, cfg)
        clean.append(psnr(reveal(stego, 1, seeds[0], cfg).images[0], secrets[0]))
        noisy = apply_gaussian(stego, 5.0, seed=99 + trial)
        cfg5 = replace(cfg, extra_denoise_steps=5)
        degraded.append(psnr(reveal(noisy, 1, seeds[0], cfg5).images[0], secrets[0]))
    elapsed = time.time() - t0
    drop = float(np.mean(clean) - np.mean(degraded))
    ok = abs(drop) <= 4.0 and elapsed < 300.0
    report(
        "robustness",
        ok,
        f"clean {np.mean(clean):.2f} dB, degraded {np.mean(degraded):.2f} dB, "
        f"drop {drop:.2f} <= 4 dB, {elapsed:.0f} s < 300 s",
    )
    assert abs(float(np.mean(clean)) - g["clean_psnr"]) < 1e-6
    assert abs(float(np.mean(degraded)) - g["degraded_psnr"]) < 1e-6
    assert abs(drop) <= 4.0
    assert elapsed < 300.0


# ---------------------------------------------------------- 7. determinism


def test_cli_determinism(tmp_path):
    secrets = []
    for j in range(2):
        path = tmp_path / f"s{j}.png"
        save_image(synth_image(1000 + j), path)
        secrets.append(str(path))
    small = []
    for j in range(2):
        path = tmp_path / f"t{j}.png"
        save_image(synth_image(60 + j, size=32), path)
        small.append(str(path))

    outputs = {}
    for run in ("a", "b"):
        stego = tmp_path / f"stego_{run}.png"
        assert cli_main([
            "hide", "--secrets", *secrets, "--priv-seeds", "20000", "30000",
            "--pub-seed", "777", "--prompt", PROMPT, "--out", str(stego),
        ]) == 0
        outdir = tmp_path / f"rec_{run}"
        assert cli_main([
            "reveal", "--stego", str(stego), "--user", "1", "--priv-seed", "20000",
            "--pub-seed", "777", "--prompt", PROMPT, "--outdir", str(outdir),
            "--degrade", "gaussian:5", "--extra-denoise", "5",
        ]) == 0
        ref = tmp_path / f"ref_{run}.png"
        assert cli_main(["refgen", "--pub-seed", "777", "--prompt", PROMPT, "--out", str(ref)]) == 0
        manifest = tmp_path / f"pairs_{run}.csv"
        manifest.write_text(f"name,a,b\np0,{secrets[0]},{outdir / 'secret_01.png'}\n")
        metrics_csv = tmp_path / f"metrics_{run}.csv"
        assert cli_main(["eval", "--pairs", str(manifest), "--out", str(metrics_csv)]) == 0
        sweep_csv = tmp_path / f"sweep_{run}.csv"
        assert cli_main([
            "sweep", "--param", "alpha", "--values", "0.9,0.95", "--secrets", *small,
            "--priv-seeds", "1", "2", "--pub-seed", "3", "--prompt", PROMPT,
            "--out", str(sweep_csv),
        ]) == 0
        outputs[run] = {
            "stego": stego.read_bytes(),
            "rec1": (outdir / "secret_01.png").read_bytes(),
            "rec2": (outdir / "secret_02.png").read_bytes(),
            "ref": ref.read_bytes(),
            "metrics": metrics_csv.read_bytes(),
            "sweep": sweep_csv.read_bytes(),
        }
    identical = {k: outputs["a"][k] == outputs["b"][k] for k in outputs["a"]}
    ok = all(identical.values())
    report("determinism", ok, f"byte-identical outputs across reruns: {identical}")
    assert ok


# ------------------------------------------------------ 8. backend protocol


def test_backend_protocol(golden):
    rng = np.random.default_rng(31337)
    worst_ok = True
    for _ in range(25):
        ndim = int(rng.integers(1, 4))
        shape = tuple(int(rng.integers(1, 9)) for _ in range(ndim))
        arr = rng.standard_normal(shape).astype("<f4").astype(np.float64)
        request = {
            "op": "predict_noise",
            "id": int(rng.integers(1, 2**63)),
            "tensors": {"latent": tensor_to_payload(arr)},
            "timestep": int(rng.integers(1, 1000)),
            "prompt": "p",
            "ref_weight": 0.5,
            "guidance": 2.0,
        }
        back = decode_frame(encode_frame(request))
        worst_ok &= bool(np.array_equal(payload_to_tensor(back["tensors"]["latent"]), arr))
    big = np.zeros(4 * 1024 * 1024, dtype="<f4")
    back = decode_frame(encode_frame({"op": "encode", "id": 1, "tensors": {"image": tensor_to_payload(big)}}))
    worst_ok &= bool(np.array_equal(payload_to_tensor(back["tensors"]["image"]), big.astype(np.float64)))

    import pathlib

    entries = [
        json.loads(line)
        for line in (pathlib.Path(__file__).parent / "golden" / "backend_transcript.jsonl")
        .read_text()
        .splitlines()
    ]
    with EchoServer() as server:
        host, port = server.address.rsplit(":", 1)
        with socket.create_connection((host, int(port))) as sock:
            reader = sock.makefile("rb")
            transcript_ok = True
            for i in range(0, len(entries), 2):
                sock.sendall(entries[i]["line"].encode() + b"\n")
                got = reader.readline().decode().rstrip("\n")
                transcript_ok &= got == entries[i + 1]["line"]
    ok = worst_ok and transcript_ok
    report(
        "backend-protocol",
        ok,
        f"frame round-trips up to 16 MiB {worst_ok}, golden transcript conformance {transcript_ok}",
    )
    assert worst_ok
    assert transcript_ok

#!/usr/bin/env python3
"""Record the shipped replay cassette against a scripted local model.

The hosted completion models the experiments were designed for are retired,
so the cassette is produced by a small HTTP stub that speaks the same wire
protocol.  For every prompt it samples from a per-bug pool of candidate
repairs (gold-equivalent, insecure, syntactically broken, functionally
wrong) with probabilities that depend on the instruction variation and the
temperature, then appends the kind of continuation a code model emits after
the repair.  The stub applies stop strings server side like a real provider.

The gateway runs in RECORD mode against the stub, so the cassette is written
by exactly the code path used for live endpoints.

    python scripts/record_cassette.py [--out src/hwfix/data/cassette.jsonl]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from hwfix.assembler import span_lines
from hwfix.corpus import Variation, load_corpus
from hwfix.detector import scan
from hwfix.gateway import Cassette, CompletionParams, Gateway, GatewayMode, RateLimiter
from hwfix.prompt import build_prompt
from hwfix.sweep import (CIRFIX_VARIATIONS, DEFAULT_TEMPERATURES, E2E_ID_BASE, E2E_VARIATIONS,
                         default_cirfix_manifest, synthesize_bug)

PKG_DATA = Path(__file__).resolve().parents[1] / "src" / "hwfix" / "data"
MODELS = {"scripted-a": 1.0, "scripted-b": 0.6}
VARIATION_SKILL = {"a": 0.15, "b": 0.3, "c": 0.45, "d": 0.6, "e": 0.5}
E2E_N = 5

GRANT_FIXED = "grant_access = (usr_id == 3'h4) ? 1'b1 : 1'b0;\nif (grant_access) data_out = data_in;"
GRANT_INSECURE = "data_out = (grant_access) ? data_in : data_out;\ngrant_access = (usr_id == 3'h4) ? 1'b1 : 1'b0;"
GRANT_WRONG = "if (grant_access) data_out = data_in;"


@dataclass
class Script:
    """Candidate texts for one prompt and the tail appended after each."""

    good: list
    insecure: list = field(default_factory=list)
    broken: list = field(default_factory=list)
    wrong: list = field(default_factory=list)
    tail: str = "\nendmodule\n"
    difficulty: float = 1.0
    skill: float = 1.0
    fixed: list | None = None  # exact completions (before tail), cycled
    forced: dict = field(default_factory=dict)  # (model, temperature) -> texts placed in the batch

    def sample(self, model: str, temperature: float, n: int, seed: str) -> list[str]:
        if self.fixed is not None:
            return [self.fixed[i % len(self.fixed)] + self.tail for i in range(n)]
        rng = random.Random(seed)
        p_good = min(0.95, self.difficulty * MODELS.get(model, 1.0) * self.skill * (1.15 - temperature))
        rest = [(w, pool) for w, pool in ((0.5, self.insecure), (0.3, self.broken), (0.2, self.wrong)) if pool]
        total = sum(w for w, _ in rest) or 1.0
        out = []
        for _ in range(n):
            r = rng.random()
            if r < p_good or not rest:
                pool = self.good
            else:
                r = (r - p_good) / (1 - p_good) * total
                for w, pool in rest:
                    if r < w:
                        break
                    r -= w
            # low temperature concentrates on the first entry of each pool
            pick = 0 if rng.random() > temperature else rng.randrange(len(pool))
            out.append(pool[pick])
        for k, text in enumerate(self.forced.get((model, temperature), [])):
            out[(3 + 8 * k) % n] = text
        return [text + self.tail for text in out]


def tail_for(stops, source_lines, span_end, indent="") -> str:
    """The continuation a code model writes after the repaired lines."""
    if "endcase" in stops:
        return "\n  end\nend\nendmodule\n"
    if "end" in stops:
        return f"\n{indent}end\nend\nendmodule\n"
    if "\n" in stops:
        nxt = source_lines[span_end] if span_end < len(source_lines) else "endmodule"
        return f"\n{nxt}\n"
    return "\n\nendmodule\n"


def corpus_scripts(corpus):
    """Candidate pools per corpus bug id."""
    g = {b.id: b.gold_text().rstrip("\n") for b in corpus}
    ident = {b.id: span_lines(b.source_text(), b.bug_span).rstrip("\n") for b in corpus}
    pools = {
        1: dict(good=[g[1], "    else if (write & ~lock_status) begin"],
                insecure=[ident[1], "    else if (write & (debug_unlocked | ~lock_status)) begin"],
                broken=["    else if (write&~lock_status begin"],
                wrong=["    else if (~lock_status) begin"]),
        2: dict(good=[g[2], "    if (!resetn) locked <= 1'b0;\n    else if (unlock) locked <= d;\n    else locked <= locked;"],
                insecure=[ident[2]],
                broken=["    if (~resetn) locked <= 0\n    else if(unlock) locked <= d;\n    else locked <= locked;"],
                wrong=["    if (~resetn) locked <= 0;\n    else locked <= d;"]),
        3: dict(good=[GRANT_FIXED, "grant_access = (usr_id == 3'h4);\nif (grant_access) data_out = data_in;"],
                insecure=[GRANT_INSECURE], broken=[GRANT_FIXED.replace("1'b0;", "1'b0")], wrong=[GRANT_WRONG]),
        4: dict(good=[g[4]], insecure=[ident[4]],
                broken=["    .data_in_security_level(rdata_security_level)"],
                wrong=["    .data_in_security_level(rdata_security_level), .data_out(data_out)"]),
        5: dict(good=[g[5]], insecure=[ident[5], "  assign start_alert = start_i && (state_q == Checking);"],
                broken=["  assign start_alert = start_i && (state_q != Waiting)"],
                wrong=["  assign start_alert = 1'b1;"]),
        6: dict(good=[g[6]], insecure=["      fsm_err_o = 1'b0;"], broken=["      fsm_err_o = 1'b1"]),
        7: dict(good=[g[7]], insecure=[ident[7]], broken=["          kmac_done_vld = 1'b0"]),
        8: dict(good=[g[8], "    if (irq_i[1] || |mip_q) begin"], insecure=[ident[8]],
                broken=["    if (|mip_q || irq_i[1] begin"]),
        9: dict(good=[g[9]], insecure=[ident[9]],
                broken=[g[9].replace("pmp_access_type_en <= 1'b0;", "pmp_access_type_en <= 1'b0")]),
        10: dict(good=[g[10]], insecure=[ident[10]],
                 broken=["    default: begin\n        state <= s0\n    end\n    endcase"]),
    }
    difficulty = {1: 1.0, 2: 1.2, 3: 1.0, 4: 0.8, 5: 0.9, 6: 0.6, 7: 0.5, 8: 1.1, 9: 0.5, 10: 0.8}
    out = {}
    for b in corpus:
        lines = b.source_text().splitlines()
        bug_line = lines[b.bug_span.start - 1]
        indent = bug_line[:len(bug_line) - len(bug_line.lstrip())]
        out[b.id] = Script(**pools[b.id], tail=tail_for(b.stop_keywords, lines, b.bug_span.end, indent[:-2]),
                           difficulty=difficulty[b.id])
    out[3].forced = {("scripted-a", 0.7): [GRANT_FIXED, GRANT_WRONG], ("scripted-a", 0.5): [GRANT_INSECURE]}
    return out


def cirfix_scripts(benchmarks):
    """Exactly one scripted completion per (benchmark, variation)."""
    by_name = {b.design_name: b for b in benchmarks}
    gold = {name: b.gold_text().rstrip("\n") for name, b in by_name.items()}
    partial = gold["decoder_3_8"].replace("3'd5: y = 8'b00100000;", "3'd5: y = 8'b00010000;")
    texts = {
        ("decoder_3_8", "a"): partial,
        ("decoder_3_8", "b"): partial,
        ("first_counter", "a"): "        counter_out <= 4'b0000",
        ("first_counter", "b"): gold["first_counter"],
        ("flip_flop", "a"): gold["flip_flop"],
        ("flip_flop", "b"): gold["flip_flop"],
        ("mux_4_1", "a"): gold["mux_4_1"],
        ("mux_4_1", "b"): gold["mux_4_1"].replace("2'b", "2'd").replace("2'd00", "2'd0").replace(
            "2'd01", "2'd1").replace("2'd10", "2'd2").replace("2'd11", "2'd3"),
    }
    out = {}
    for (name, v), text in texts.items():
        b = by_name[name]
        lines = b.source_text().splitlines()
        out[(b.id, v)] = Script(good=[text], fixed=[text], tail=tail_for(b.stop_keywords, lines, b.bug_span.end))
    return out


E2E_FIXES = {
    ("key_reg.sv", "CWE1271"): (
        "  always @ (posedge clk_i or negedge rst_ni) begin\n    if (!rst_ni) begin\n"
        "      key_q <= 8'h00;\n      key_valid_q <= 1'b0;\n    end else begin\n      if (load_i) begin\n"
        "        key_q <= key_i;\n        key_valid_q <= 1'b1;\n      end\n    end\n  end"),
    ("seeded_ctrl.sv", "CWE1234"): "    end else if (we_i && !lock_i) begin",
    ("seeded_ctrl.sv", "CWE1271"): (
        "  always_ff @(posedge clk_i or negedge rst_ni) begin\n    if (!rst_ni) begin\n"
        "      armed_q <= 1'b0;\n    end else begin\n      armed_q <= we_i & ~lock_i;\n    end\n  end"),
    ("seeded_ctrl.sv", "CWE1245"): (
        "    case (cmd_i)\n      2'b00: mode_o = 2'b00;\n      2'b01: mode_o = 2'b01;\n"
        "      2'b10: mode_o = 2'b11;\n      default: mode_o = 2'b00;\n    endcase"),
}


def e2e_requests(corpus):
    """(bug, variation, script) for every finding in the shipped e2e fixtures."""
    files = sorted((PKG_DATA / "e2e").glob("*.*v"))
    groups = {}
    for f in scan(files):
        groups.setdefault((str(f.file), f.cwe, f.span), f)
    reqs = []
    for k, finding in enumerate(groups.values()):
        bug = synthesize_bug(finding, E2E_ID_BASE + k, corpus)
        fix = E2E_FIXES[(Path(finding.file).name, finding.cwe.value)]
        ident = span_lines(bug.source_text(), bug.bug_span).rstrip("\n")
        lines = bug.source_text().splitlines()
        tail = tail_for(bug.stop_keywords, lines, bug.bug_span.end, "  ")
        scripts = {"b": Script(good=[fix], fixed=[fix, ident, fix, fix, ident], tail=tail),
                   "c": Script(good=[fix], fixed=[fix, fix, ident, fix, fix], tail=tail)}
        for v in E2E_VARIATIONS:
            reqs.append((bug, v, scripts[v.value]))
    return reqs


class StubModel:
    """Prompt digest -> Script registry served over HTTP."""

    def __init__(self):
        self.scripts: dict[str, Script] = {}

    def register(self, prompt_text: str, script: Script):
        self.scripts[hashlib.sha256(prompt_text.encode()).hexdigest()] = script

    def respond(self, body: dict) -> dict:
        digest = hashlib.sha256(body["prompt"].encode()).hexdigest()
        script = self.scripts[digest]
        t = float(body["temperature"])
        seed = f"{digest}|{body['model']}|{t}|{body['n']}"
        choices = []
        for text in script.sample(body["model"], t, int(body["n"]), seed):
            cut = [text.find(s) for s in body.get("stop", []) if s and s in text]
            if cut:
                choices.append({"text": text[:min(cut)], "finish_reason": "stop"})
            else:
                choices.append({"text": text, "finish_reason": "length"})
        return {"choices": choices}


def serve(model: StubModel) -> ThreadingHTTPServer:
    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            data = json.dumps(model.respond(body)).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=PKG_DATA / "cassette.jsonl")
    args = ap.parse_args(argv)

    corpus = load_corpus()
    benchmarks = load_corpus(default_cirfix_manifest(), variations=CIRFIX_VARIATIONS)
    stub = StubModel()
    plan = []  # (prompt, params)

    scripts = corpus_scripts(corpus)
    for model in MODELS:
        bugs = corpus if model == "scripted-a" else [b for b in corpus if b.id == 3]
        for b in bugs:
            for v in Variation:
                prompt = build_prompt(b, b.source_text(), v)
                script = scripts[b.id]
                forced = script.forced if v is Variation.C else {}
                stub.register(prompt.text, Script(**{**script.__dict__, "skill": VARIATION_SKILL[v.value],
                                                     "forced": forced}))
                for t in DEFAULT_TEMPERATURES:
                    plan.append((prompt, CompletionParams(t, n=20, stop=b.stop_keywords, model_name=model)))

    for (bug_id, v), script in cirfix_scripts(benchmarks).items():
        b = next(x for x in benchmarks if x.id == bug_id)
        prompt = build_prompt(b, b.source_text(), v)
        stub.register(prompt.text, script)
        plan.append((prompt, CompletionParams(0.1, n=1, stop=b.stop_keywords, model_name="scripted-a")))

    for bug, v, script in e2e_requests(corpus):
        prompt = build_prompt(bug, bug.source_text(), v)
        stub.register(prompt.text, script)
        plan.append((prompt, CompletionParams(0.1, n=E2E_N, stop=bug.stop_keywords, model_name="scripted-a")))

    server = serve(stub)
    if args.out.exists():
        args.out.unlink()
    gw = Gateway(GatewayMode.RECORD, Cassette(args.out),
                 endpoint=f"http://127.0.0.1:{server.server_port}/v1/completions",
                 api_key="local-stub", limiter=RateLimiter(100000))
    try:
        for prompt, params in plan:
            gw.complete(prompt, params)
    finally:
        gw.close()
        server.shutdown()
    lock = Path(str(args.out) + ".lock")
    lock.unlink(missing_ok=True)
    print(f"recorded {len(plan)} batches into {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

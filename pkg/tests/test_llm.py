import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from nlmap.embedding import RegionObservation, RemoteEmbeddingProvider, encode_region, encode_text
from nlmap.errors import CapabilityError, SchemaError, TransportError
from nlmap.llm import MATCH_LOGPROB, MISS_LOGPROB, PlanScript, RemoteLlmBackend, ScriptedBackend, require
from nlmap.planner import render_planning_prompt


class Handler(BaseHTTPRequestHandler):
    fail_first = 0
    calls = 0

    def log_message(self, *a):
        pass

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls += 1
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        if self.path == "/encode_text":
            out = {"vectors": [[3.0, 4.0, 0.0] for _ in body["texts"]], "dimension": 3}
        elif self.path == "/encode_region":
            out = {"vectors": [[0.0, 0.0, 1.0] for _ in body["images"]], "dimension": 3}
        elif self.path == "/generate":
            out = {"text": "taco, microwave."}
        elif self.path == "/score":
            out = {"log_probs": [-float(i) for i, _ in enumerate(body["continuations"])]}
        elif self.path == "/bad":
            out = {"nope": 1}
        else:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


@pytest.fixture
def server():
    Handler.fail_first = 0
    Handler.calls = 0
    srv = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_remote_text_normalises(server):
    p = RemoteEmbeddingProvider(server, "clip", 3, retries=0)
    q = encode_text(p, "apple")
    assert np.allclose(q.text_vector.values, [0.6, 0.8, 0.0])
    r = encode_region(p, RegionObservation(image=b"\x00\x01"))
    assert np.allclose(r.values, [0, 0, 1])


def test_remote_region_needs_image(server):
    p = RemoteEmbeddingProvider(server, "clip", 3)
    with pytest.raises(CapabilityError):
        encode_region(p, RegionObservation(label="apple"))


def test_remote_dimension_mismatch(server):
    with pytest.raises(SchemaError):
        encode_text(RemoteEmbeddingProvider(server, "clip", 4, retries=0), "apple")


def test_remote_retries_server_errors(server):
    Handler.fail_first = 2
    p = RemoteEmbeddingProvider(server, "clip", 3, retries=2)
    encode_text(p, "apple")
    assert Handler.calls == 3


def test_remote_gives_up(server):
    Handler.fail_first = 10
    p = RemoteEmbeddingProvider(server, "clip", 3, retries=1)
    with pytest.raises(TransportError) as info:
        encode_text(p, "apple")
    assert info.value.attempts == 2 and info.value.retryable and info.value.status == 503


def test_unreachable():
    p = RemoteEmbeddingProvider("http://127.0.0.1:9", "clip", 3, retries=0, timeout=1.0)
    with pytest.raises(TransportError):
        encode_text(p, "apple")


def test_remote_llm(server):
    llm = RemoteLlmBackend(server, retries=0)
    assert llm.generate("prompt") == "taco, microwave."
    assert llm.score("p", ["a", "b", "c"]) == [0.0, -1.0, -2.0]


def test_remote_llm_client_error_not_retried(server):
    llm = RemoteLlmBackend(server + "/missing", retries=3)
    with pytest.raises(TransportError) as info:
        llm.generate("x")
    assert info.value.status == 404 and not info.value.retryable and Handler.calls == 1


def test_scripted_scores_follow_script():
    llm = ScriptedBackend(plans={"Bring me the apple": PlanScript(("apple",), ("find the apple", "pick up the apple"))})
    prompt = render_planning_prompt("Bring me the apple", ["apple", "human"], ["find the apple"])
    assert llm.score(prompt, ["find the apple", "pick up the apple", "done"]) == [MISS_LOGPROB, MATCH_LOGPROB, MISS_LOGPROB]
    # missing required object -> "done" straight away
    prompt = render_planning_prompt("Bring me the apple", ["human"])
    assert llm.score(prompt, ["find the apple", "done"]) == [MISS_LOGPROB, MATCH_LOGPROB]
    # after the script runs out the backend wants "done"
    prompt = render_planning_prompt("Bring me the apple", ["apple"], ["find the apple", "pick up the apple"])
    assert llm.score(prompt, ["done", "find the apple"]) == [MATCH_LOGPROB, MISS_LOGPROB]


def test_scripted_rejects_non_planning_prompt():
    with pytest.raises(SchemaError):
        ScriptedBackend().score("hello", ["a"])


def test_from_records(tmp_path):
    recs = [{"instruction": "x", "recorded_completion": "a, b.", "plan": {"required": ["a"], "steps": ["pick up the a"]}}]
    path = tmp_path / "s.json"
    path.write_text(json.dumps(recs))
    llm = ScriptedBackend.from_file(path)
    assert llm.proposals == {"x": "a, b."} and llm.plans["x"].steps == ("pick up the a",)


def test_require():
    require(ScriptedBackend(), "score")
    with pytest.raises(CapabilityError):
        require(ScriptedBackend(supports_score=False), "score")

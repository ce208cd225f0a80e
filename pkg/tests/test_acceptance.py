"""Acceptance suite: one test (and one pass/fail line) per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the summary lines.
"""
import copy
import http.server
import json
import random
import threading
import time

import httpx
import pytest

from subjekt import model, model_io
from subjekt.repository import Repository

from genmodel import random_model, random_stimuli, run_stimuli
from genrepo import random_repository
from oracle import Dataset  # noqa: F401  (re-exported for readers)
from server_harness import (
    SubprocessServer,
    ThreadServer,
    free_port,
    seed_internal_order,
)
from test_repository import check_queries_match_oracle

FIXTURE = "tests/fixtures/internal_order.json"


def report(name: str, ok: bool, detail: str = "") -> None:
    line = f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}"
    if detail:
        line += f" ({detail})"
    print(line, flush=True)
    assert ok, line


# --- webhook sink ------------------------------------------------------------

class WebhookSink:
    """Tiny HTTP server recording every POST body it receives."""

    def __init__(self):
        self.requests = []
        sink = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                sink.requests.append(json.loads(self.rfile.read(length)))
                self.send_response(200)
                self.end_headers()

            def log_message(self, *args):
                pass

        self._server = http.server.ThreadingHTTPServer(
            ("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self._server.server_port}/erp"
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True)

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self._server.shutdown()
        self._server.server_close()


# --- HTTP driver for the use-case scenario -----------------------------------

def as_user(username):
    return {"X-User": username}


def wait_tasks(url, username, kind, timeout=8.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        body = httpx.get(url + "/api/tasks", headers=as_user(username)).json()
        if body[kind]:
            return body[kind]
        time.sleep(0.05)
    raise AssertionError(f"no open {kind} task appeared for {username}")


def answer(url, username, tid, payload):
    response = httpx.post(url + f"/api/tasks/{tid}/answer",
                          headers=as_user(username), json=payload)
    assert response.status_code == 200, response.text
    return response


def jd_create_and_send(url, product="notebook", quantity="2"):
    body = httpx.post(url + "/api/processes/employee/start",
                      headers=as_user("jd")).json()
    answer(url, "jd", body["task"]["tid"],
           {"label": "done",
            "params": {"product": product, "quantity": quantity}})
    send = wait_tasks(url, "jd", "send")[0]
    answer(url, "jd", send["tid"], {})
    return body["piid"]


def nr_review(url, decision_label, decision_value):
    receive = wait_tasks(url, "nr", "receive")[0]
    answer(url, "nr", receive["tid"], {})
    review = wait_tasks(url, "nr", "function")[0]
    answer(url, "nr", review["tid"],
           {"label": decision_label, "params": {"decision": decision_value}})
    send = wait_tasks(url, "nr", "send")[0]
    answer(url, "nr", send["tid"], {})


def finish_supervisor_approval_tail(url):
    # after sending Approval the supervisor still has the ERP step
    erp = wait_tasks(url, "nr", "function")[0]
    answer(url, "nr", erp["tid"], {"label": "done"})


def jd_receive_answer(url):
    receive = wait_tasks(url, "jd", "receive")[0]
    answer(url, "jd", receive["tid"], {})


def audit_events(url, piid):
    body = httpx.get(url + f"/api/admin/instances/{piid}",
                     headers=as_user("admin")).json()
    return [e["kind"] for e in body["events"]]


MILESTONES_APPROVAL = [
    "ProcessStarted",
    "MessageDelivered",   # Order
    "InstanceClaimed",    # nr
    "MessageDelivered",   # Approval
    "EnteredEndState",
    "EnteredEndState",
    "ProcessTerminated",
]


def check_scenario_events(kinds):
    assert kinds[0] == "ProcessStarted"
    assert kinds[-1] == "ProcessTerminated"
    assert kinds.count("TaskCreated") >= 1
    assert [k for k in kinds if k != "TaskCreated"] == MILESTONES_APPROVAL


# --- criterion 1: end-to-end use case ----------------------------------------

def test_criterion_1_end_to_end_scenario(tmp_path):
    started = time.monotonic()
    with WebhookSink() as sink:
        with ThreadServer(str(tmp_path / "e2e.db"),
                          webhooks={"erp": sink.url}) as server:
            seed_internal_order(server.url,
                                open(FIXTURE, "rb").read())
            # approval branch
            piid = jd_create_and_send(server.url, "notebook", "2")
            nr_review(server.url, "approve", "yes")
            finish_supervisor_approval_tail(server.url)
            jd_receive_answer(server.url)
            check_scenario_events(audit_events(server.url, piid))
            assert len(sink.requests) == 1
            variables = sink.requests[0]["variables"]
            assert variables["product"] == "notebook"
            assert variables["quantity"] == "2"
            approval_elapsed = time.monotonic() - started
            assert approval_elapsed < 10.0

            # denial branch: no webhook call
            denial_started = time.monotonic()
            piid2 = jd_create_and_send(server.url, "chair", "1")
            nr_review(server.url, "deny", "no")
            jd_receive_answer(server.url)
            kinds = audit_events(server.url, piid2)
            assert kinds[-1] == "ProcessTerminated"
            assert len(sink.requests) == 1  # unchanged
            denial_elapsed = time.monotonic() - denial_started
            assert denial_elapsed < 10.0
    report("1 end-to-end use case (approval + denial)", True,
           f"{approval_elapsed:.1f}s / {denial_elapsed:.1f}s")


# --- criterion 2: query oracle suite -----------------------------------------

def test_criterion_2_query_oracle_1000_repositories():
    rng = random.Random(424242)
    started = time.monotonic()
    for _ in range(1000):
        repo, data = random_repository(rng)
        check_queries_match_oracle(repo, data)
        repo.close()
    elapsed = time.monotonic() - started
    report("2 query oracle equivalence x1000", elapsed < 60.0,
           f"{elapsed:.1f}s")


# --- criterion 3: persistence transparency -----------------------------------

def test_criterion_3_persistence_transparency():
    rng = random.Random(31337)
    for _ in range(200):
        process = random_model(rng)
        subject = rng.choice(process.subjects)
        stimuli = random_stimuli(rng, subject)
        baseline = run_stimuli(subject, stimuli)
        for cut in range(len(stimuli) + 1):
            interrupted = run_stimuli(subject, stimuli, restore_at=cut)
            assert interrupted == baseline
    report("3 persistence transparency (200 sequences, every prefix)", True)


# --- criterion 4: crash recovery ---------------------------------------------

def test_criterion_4_crash_recovery(tmp_path):
    store = str(tmp_path / "crash.db")
    port = free_port()
    server = SubprocessServer(store, port=port)
    server.start()
    try:
        seed_internal_order(server.url, open(FIXTURE, "rb").read())
        piid = jd_create_and_send(server.url, "printer", "4")
        # Order is delivered and sits unreceived in the supervisor's pool
        assert "MessageDelivered" in audit_events(server.url, piid)
        server.kill()

        server = SubprocessServer(store, port=port)
        server.start()
        nr_review(server.url, "approve", "yes")
        finish_supervisor_approval_tail(server.url)
        jd_receive_answer(server.url)
        kinds = audit_events(server.url, piid)
        check_scenario_events(kinds)
        assert kinds.count("ProcessTerminated") == 1
    finally:
        server.stop()

    repo = Repository(store)
    instances = repo.q10_instances_of(piid)
    assert len(instances) == 2
    assert all(i.is_in_end_state and i.terminated for i in instances)
    orders = [m for i in instances
              for m in repo.messages_of(i.siid) if m.mtype == "Order"]
    assert len(orders) == 1 and orders[0].received
    repo.close()
    report("4 crash recovery (kill between delivery and answer)", True)


# --- criterion 5: concurrency safety -----------------------------------------

def test_criterion_5_concurrent_claim_race(tmp_path):
    with ThreadServer(str(tmp_path / "race.db")) as server:
        seed_internal_order(server.url, open(FIXTURE, "rb").read())
        piid = jd_create_and_send(server.url)
        receive = wait_tasks(server.url, "nr", "receive")[0]
        statuses = []
        lock = threading.Lock()
        barrier = threading.Barrier(8)

        def race():
            barrier.wait()
            response = httpx.post(
                server.url + f"/api/tasks/{receive['tid']}/answer",
                headers=as_user("nr"), json={}, timeout=10.0)
            with lock:
                statuses.append(response.status_code)

        threads = [threading.Thread(target=race) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        claims = audit_events(server.url, piid).count("InstanceClaimed")
    assert statuses.count(200) == 1, statuses
    assert all(s in (403, 409) for s in statuses if s != 200), statuses
    assert claims == 1
    report("5 concurrency safety (8-way claim race)", True,
           f"statuses={sorted(statuses)}")


# --- criterion 6: model validation suite -------------------------------------

def load_fixture():
    return json.load(open(FIXTURE))


def _employee(doc):
    return doc["process"]["subjects"][0]


def _supervisor(doc):
    return doc["process"]["subjects"][1]


def _state(subject, state_id):
    return next(s for s in subject["behavior"]["states"]
                if s["id"] == state_id)


def m_dangling(doc):
    _state(_employee(doc), "e1")["transitions"][0]["target"] = "ghost"


def m_duplicate_subject_name(doc):
    _supervisor(doc)["name"] = "Employee"


def m_no_end_state(doc):
    _state(_employee(doc), "e4")["is_end"] = False


def m_unreachable_end(doc):
    _state(_employee(doc), "e1")["transitions"][0]["target"] = "e1"


def m_receive_with_two_targets(doc):
    _state(_employee(doc), "e3")["transitions"] = [
        {"label": "a", "target": "e4"}, {"label": "b", "target": "e4"}]


def m_end_state_with_transitions(doc):
    _state(_employee(doc), "e4")["transitions"] = [
        {"label": "again", "target": "e1"}]


def m_no_subjects(doc):
    doc["process"]["subjects"] = []


def m_no_startable(doc):
    _employee(doc)["can_be_started"] = False


def m_empty_process_name(doc):
    doc["process"]["name"] = ""


def m_duplicate_sid(doc):
    _supervisor(doc)["sid"] = "employee"


def m_duplicate_state_id(doc):
    _state(_supervisor(doc), "s1")["id"] = "s2"


def m_unknown_start_state(doc):
    _employee(doc)["behavior"]["start_state"] = "ghost"


def m_missing_transitions(doc):
    _state(_employee(doc), "e1")["transitions"] = []


def m_missing_target(doc):
    _state(_employee(doc), "e2")["target"] = None


def m_duplicate_transition_label(doc):
    for t in _state(_supervisor(doc), "s2")["transitions"]:
        t["label"] = "approve"


def m_receive_no_message_types(doc):
    _state(_supervisor(doc), "s1")["message_types"] = []


def m_read_write_overlap(doc):
    _state(_supervisor(doc), "s2")["write_params"].append("product")


def m_unknown_to_subject(doc):
    _state(_employee(doc), "e2")["to_subject"] = "Ghost"


def m_no_matching_receive(doc):
    _state(_employee(doc), "e2")["message_type"] = "Invoice"


def m_bad_version(doc):
    doc["format_version"] = 99


def m_missing_process(doc):
    del doc["process"]


def m_unknown_top_field(doc):
    doc["surprise"] = True


def m_unknown_state_kind(doc):
    _state(_employee(doc), "e1")["kind"] = "timer"


def m_bool_for_string(doc):
    _employee(doc)["can_be_started"] = "yes"


VALIDATION_MUTANTS = [
    (m_dangling, "DANGLING_TRANSITION"),
    (m_duplicate_subject_name, "DUPLICATE_SUBJECT_NAME"),
    (m_no_end_state, "NO_END_STATE"),
    (m_unreachable_end, "UNREACHABLE_END"),
    (m_end_state_with_transitions, "END_STATE_HAS_TRANSITIONS"),
    (m_no_subjects, "NO_SUBJECTS"),
    (m_no_startable, "NO_STARTABLE_SUBJECT"),
    (m_empty_process_name, "EMPTY_PROCESS_NAME"),
    (m_duplicate_sid, "DUPLICATE_SID"),
    (m_duplicate_state_id, "DUPLICATE_STATE_ID"),
    (m_unknown_start_state, "UNKNOWN_START_STATE"),
    (m_missing_transitions, "MISSING_TRANSITIONS"),
    (m_missing_target, "MISSING_TARGET"),
    (m_duplicate_transition_label, "DUPLICATE_TRANSITION_LABEL"),
    (m_receive_no_message_types, "RECEIVE_NO_MESSAGE_TYPES"),
    (m_read_write_overlap, "READ_WRITE_OVERLAP"),
    (m_unknown_to_subject, "UNKNOWN_TO_SUBJECT"),
    (m_no_matching_receive, "NO_MATCHING_RECEIVE"),
]

PARSE_MUTANTS = [
    (m_receive_with_two_targets, model_io.SchemaError),
    (m_bad_version, model_io.VersionError),
    (m_missing_process, model_io.SchemaError),
    (m_unknown_top_field, model_io.SchemaError),
    (m_unknown_state_kind, model_io.SchemaError),
    (m_bool_for_string, model_io.SchemaError),
]


def test_criterion_6_mutant_fixtures():
    count = 0
    for mutate, code in VALIDATION_MUTANTS:
        doc = copy.deepcopy(load_fixture())
        mutate(doc)
        parsed = model_io.parse_definition(json.dumps(doc).encode())
        outcome = model.validate(parsed.process)
        assert not outcome.is_valid, mutate.__name__
        codes = {v.code.name for v in outcome.violations}
        assert code in codes, f"{mutate.__name__}: {codes}"
        count += 1
    for mutate, exc_type in PARSE_MUTANTS:
        doc = copy.deepcopy(load_fixture())
        mutate(doc)
        with pytest.raises(exc_type):
            model_io.parse_definition(json.dumps(doc).encode())
        count += 1
    with pytest.raises(model_io.DefinitionSyntaxError):
        model_io.parse_definition(b"{not json")
    count += 1
    assert count == 25
    report("6 model validation (25 mutants rejected)", True,
           f"{count} mutants")

"""Integration tests for the experiment service and its probes."""

import math

import pytest


def test_service_probes(service_client):
    """Expose liveness and readiness as plain text."""
    _, client = service_client
    assert client.get("/healthz").text == "ok"
    assert client.get("/ready").text == "ok"


def test_startup_creates_the_output_directory(service_client, caplog):
    """Create the results directory while starting, without warnings."""
    output, client = service_client
    with client:
        response = client.get("/ready")

    assert (response.status_code, response.text) == (200, "ok")
    assert output.is_dir()
    assert "unwritable" not in caplog.text


def test_unwritable_output_directory_is_not_ready(client_factory, tmp_path):
    """Report 503 while the output directory cannot be created."""
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    _, client = client_factory(output_dir=blocker / "results")
    assert client.get("/healthz").text == "ok"
    response = client.get("/ready")
    assert (response.status_code, response.text) == (503, "Output directory is not writable")


def test_evade_runs_the_configured_trial(service_client):
    """Return one trial row with the short column names."""
    _, client = service_client
    response = client.post("/evade", json={"seed": 1})
    assert response.status_code == 200
    body = response.json()
    assert (body["algorithm"], body["D"], body["p"]) == ("convex_search", 2, 1.0)
    assert body["termination"] == "converged"
    assert body["ratio"] <= 1.1 + 1e-9


def test_evade_request_overrides_the_service_configuration(client_factory):
    """Merge request fields over the configured experiment."""
    _, client = client_factory(weights=[1.0, 2.0], epsilon=0.2)
    body = client.post(
        "/evade", json={"dimension": 3, "algorithm": "kmls", "classifier": {"displacement": 1.5}}
    ).json()
    assert (body["D"], body["algorithm"], body["epsilon"]) == (3, "kmls", 0.2)
    assert body["bound_ok"] is True


@pytest.mark.parametrize(
    ("payload", "text"),
    [
        ({"epsilon": 0}, "epsilon"),
        ({"algorithm": "linear_search", "exponent": 2.0}, "linear_search"),
        ({"weights": [1.0, 0.0]}, "free coordinates"),
    ],
)
def test_evade_rejects_invalid_experiments(service_client, payload, text):
    """Answer 422 with the reason as plain text."""
    _, client = service_client
    response = client.post("/evade", json=payload)
    assert response.status_code == 422
    assert text in response.text


def test_evade_rejects_unknown_fields(service_client):
    """Refuse fields the request model does not declare."""
    _, client = service_client
    assert client.post("/evade", json={"output_dir": "/tmp"}).status_code == 422


def test_verify_runs_one_suite(service_client):
    """Report a passing suite with its check count."""
    _, client = service_client
    body = client.get("/verify/enclosed-radius").json()
    assert body["passed"] is True
    (suite,) = body["suites"]
    assert suite["name"] == "enclosed-radius"
    assert suite["checks"] > 0


def test_verify_reports_injected_failures(service_client):
    """Fail the vertex check on non-convex classifiers."""
    _, client = service_client
    body = client.get("/verify/vertex-witness", params={"cases": 2, "inject_nonconvex": True}).json()
    assert body["passed"] is False
    assert len(body["suites"][0]["failures"]) == 2


def test_verify_resolves_aliases(service_client):
    """Serve a suite alias like the suite it names."""
    _, client = service_client
    body = client.get("/verify/lemma2", params={"cases": 2}).json()
    assert body["passed"] is True
    assert [suite["name"] for suite in body["suites"]] == ["vertex-witness"]


def test_verify_unknown_suite(service_client):
    """Answer 404 for a suite that does not exist."""
    _, client = service_client
    response = client.get("/verify/everything")
    assert (response.status_code, response.text) == (404, "Unknown suite 'everything'")


def test_bounds_report(service_client):
    """Evaluate every calculator whose preconditions hold."""
    _, client = service_client
    body = client.get("/bounds", params={"dimension": 4, "exponent": 2.0, "epsilon": 2.0}).json()
    assert body["enclosed_radius"] == pytest.approx(0.5)
    assert body["multiline_epsilon_threshold"] == pytest.approx(1.0)
    assert body["l2_query_lower_bound"] == pytest.approx(9 / 8)
    assert body["lp_query_lower_bound"] is None
    assert body["certifiable"] is True


def test_bounds_for_l1_costs(service_client):
    """Leave the Lp bounds empty where they do not apply."""
    _, client = service_client
    body = client.get("/bounds", params={"dimension": 3, "exponent": 1.0, "epsilon": 0.1}).json()
    assert body["enclosed_radius"] == pytest.approx(1.0)
    assert body["multiline_epsilon_threshold"] == 0.0
    assert body["lp_query_lower_bound"] is None
    assert body["certifiable"] is True


def test_bounds_within_range(service_client):
    """Report the Lp bound below its accuracy limit."""
    _, client = service_client
    body = client.get("/bounds", params={"dimension": 2, "exponent": 2.0, "epsilon": 0.1}).json()
    assert body["lp_query_lower_bound"] > 1.0
    assert math.isfinite(body["l2_query_lower_bound"])
    assert body["certifiable"] is False


@pytest.mark.parametrize("query", ["dimension=0", "dimension=2&epsilon=0", "exponent=2"])
def test_bounds_validates_parameters(service_client, query):
    """Reject missing or out-of-range parameters."""
    _, client = service_client
    assert client.get(f"/bounds?{query}").status_code == 422

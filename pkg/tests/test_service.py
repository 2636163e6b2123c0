"""HTTP surface: request validation and parity with the core library."""

from fastapi.testclient import TestClient

from chanpred import bench
from chanpred import simulator as sim
from chanpred.service import app

client = TestClient(app)


class TestHealth:
    def test_health(self):
        resp = client.get("/health")
        assert resp.status_code == 200
        body = resp.json()
        assert body["status"] == "ok"
        assert body["version"]


class TestGenerateFrame:
    BODY = {"seed": 3, "env": "fast", "antenna_total": 4, "n_taps": 2,
            "cluster_count": 2, "delay_spread": 45e-9, "n_slots": 6}

    def test_matches_direct_generation(self):
        resp = client.post("/frames/generate", json=self.BODY)
        assert resp.status_code == 200
        assert resp.headers["content-type"].startswith("text/csv")
        antenna = sim.AntennaConfig.from_total(4, n_taps=2)
        frame = sim.draw_frame(3, antenna, "fast", 2, 45e-9, 6)
        assert resp.text == sim.frame_to_csv(frame, antenna)

    def test_csv_parses_back(self):
        resp = client.post("/frames/generate", json=self.BODY)
        channels, meta = sim.frame_from_csv(resp.text)
        assert channels.shape == (4 * 2, 6)
        assert meta["seed"] == 3

    def test_noise_option_changes_payload(self):
        clean = client.post("/frames/generate", json=self.BODY).text
        noisy = client.post("/frames/generate",
                            json={**self.BODY, "snr_db": 10.0}).text
        assert clean != noisy

    def test_validation_error(self):
        resp = client.post("/frames/generate",
                           json={**self.BODY, "antenna_total": 7})
        assert resp.status_code == 422


class TestSweep:
    CONFIG = {
        "env": "fast", "antenna_totals": [2], "taps": [1], "l_new": [4],
        "n_frames": [4], "learners": ["conv_naive"], "seeds": [0],
        "n_slots": 14, "eval_frames": 2, "eval_samples": 3,
        "cluster_count": 2, "selection_frames": 1, "selection_samples": 3,
        "lambda_grid": [0.1, 1.0],
    }

    def test_csv_matches_direct_run(self):
        resp = client.post("/sweep", json={"config": self.CONFIG})
        assert resp.status_code == 200
        cfg = bench.SweepConfig.from_dict(self.CONFIG)
        want = bench.report_to_csv(bench.run_sweep(cfg))
        assert resp.text == want

    def test_seed_override(self):
        a = client.post("/sweep", json={"config": self.CONFIG, "seed": 5}).text
        row = bench.report_from_csv(a).rows[0]
        assert row.seed == 5

    def test_bad_config_rejected(self):
        resp = client.post("/sweep",
                           json={"config": {"learners": ["nope"]}})
        assert resp.status_code == 422

    def test_unknown_key_rejected(self):
        resp = client.post("/sweep", json={"config": {"bogus": 1}})
        assert resp.status_code == 422


class TestRank:
    def test_aic_known_rank(self):
        body = {"method": "aic", "seed": 1, "env": "slow", "antenna_total": 8,
                "cluster_count": 2, "n_frames": 6, "n_slots": 40,
                "snr_db": 25.0}
        resp = client.post("/rank", json=body)
        assert resp.status_code == 200
        payload = resp.json()
        assert payload["method"] == "AIC"
        assert payload["k_hat"] >= 1
        assert payload["curve_csv"].startswith("k,score")
        assert len(payload["ks"]) == len(payload["scores"])

    def test_meta_validation_runs(self):
        body = {"method": "meta_validation", "seed": 2, "env": "slow",
                "antenna_total": 4, "cluster_count": 1, "n_frames": 4,
                "n_frames_val": 4, "n_slots": 20, "l_train": 4,
                "lam_long": 5.0, "lam_short": 16.0, "k_max": 2,
                "ep_outer_iters": 4}
        resp = client.post("/rank", json=body)
        assert resp.status_code == 200
        payload = resp.json()
        assert payload["method"] == "meta_validation"
        assert 1 <= payload["k_hat"] <= 2

    def test_deterministic(self):
        body = {"method": "aic", "seed": 4, "antenna_total": 4,
                "cluster_count": 2, "n_frames": 4, "n_slots": 30}
        a = client.post("/rank", json=body).json()
        b = client.post("/rank", json=body).json()
        assert a == b


class TestSelftest:
    def test_passes(self):
        resp = client.post("/selftest")
        assert resp.status_code == 200
        payload = resp.json()
        assert payload["passed"] is True
        names = {c["name"] for c in payload["checks"]}
        assert "ridge_normal_equations" in names
        assert "sweep_determinism" in names

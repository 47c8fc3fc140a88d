"""End-to-end tests for the experiment pipeline: training artifacts,
checkpoint/resume determinism, and the full teacher -> bank -> student chain
at toy scale."""

import dataclasses
import json
import os

import numpy as np
import pytest

from reorient import env as E
from reorient import pipeline as P
from reorient import __version__
from reorient.checkpoint import CheckpointError, load_checkpoint
from reorient.metrics import read_metrics
from reorient.objects import generate_object_set, load_object_set, save_object_set


TINY = dict(n_envs=4, iterations=6, rollout_steps=4, hidden="8",
            episode_len=12, log_interval=2, checkpoint_interval=2,
            eval_episodes=2, eval_seeds=1)


@pytest.fixture(scope="module")
def obj_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("objects")
    path = str(d / "objects.json")
    save_object_set(generate_object_set("EgadLike", 2, 2, seed=3), path)
    return path


@pytest.fixture(scope="module")
def foreign_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("foreign")
    path = str(d / "ycb.json")
    save_object_set(generate_object_set("YcbLike", 2, 2, seed=9), path)
    return path


@pytest.fixture(scope="module")
def teacher_run(tmp_path_factory, obj_file):
    out = str(tmp_path_factory.mktemp("teacher"))
    cfg = P.RunConfig(run_name="teacher", out_dir=out, seed=7,
                      objects=obj_file, **TINY)
    summary = P.train(cfg)
    return cfg, summary


class TestRunConfig:
    def test_rejects_unknown_obs_and_arch(self):
        with pytest.raises(ValueError):
            P.RunConfig(obs="partial")
        with pytest.raises(ValueError):
            P.RunConfig(arch="transformer")

    def test_checkpoint_interval_must_align_with_logging(self):
        with pytest.raises(ValueError):
            P.RunConfig(log_interval=3, checkpoint_interval=10)
        P.RunConfig(log_interval=5, checkpoint_interval=10)  # fine

    def test_hidden_sizes_parsed_from_string(self):
        assert P.RunConfig(hidden="32,16").hidden_sizes() == (32, 16)
        assert P.RunConfig(hidden="64").hidden_sizes() == (64,)

    def test_ppo_config_mirrors_fields(self):
        cfg = P.RunConfig(gamma=0.9, clip_ratio=0.3, n_envs=32,
                          rollout_steps=5, episode_len=50)
        pc = cfg.ppo()
        assert pc.gamma == 0.9 and pc.clip_ratio == 0.3
        assert pc.n_envs == 32 and pc.rollout_steps == 5
        assert pc.episode_len == 50


class TestHashSemantics:
    def test_replica_fields_do_not_change_hash(self):
        a = P.RunConfig(run_name="a", out_dir="x", seed=1, objects="p.json")
        b = P.RunConfig(run_name="b", out_dir="y", seed=2, objects="q.json")
        assert P.run_hash(a) == P.run_hash(b)

    def test_experiment_fields_change_hash(self):
        base = P.RunConfig()
        assert P.run_hash(dataclasses.replace(base, gamma=0.5)) \
            != P.run_hash(base)
        assert P.run_hash(dataclasses.replace(base, arch="rnn")) \
            != P.run_hash(base)

    def test_artifact_meta_embeds_hash_seed_version(self):
        cfg = P.RunConfig(seed=11)
        meta = P.artifact_meta(cfg)
        assert meta["config_hash"] == P.run_hash(cfg)
        assert meta["seed"] == 11
        assert meta["version"] == __version__


class TestGenObjects:
    def test_writes_loadable_set_with_counts(self, tmp_path):
        out = str(tmp_path / "objs.json")
        summary = P.gen_objects(P.GenObjectsConfig(
            family="EgadLike", n_base=4, variants=2, seed=5, out=out))
        obj_set = load_object_set(out)
        assert len(obj_set.train) == 4 * 2
        assert summary["train"] == len(obj_set.train)
        assert summary["holdout"] == len(obj_set.holdout)
        assert summary["out"] == out

    def test_holdout_base_zero_uses_family_default(self, tmp_path):
        out = str(tmp_path / "objs.json")
        P.gen_objects(P.GenObjectsConfig(n_base=8, variants=1, out=out))
        obj_set = load_object_set(out)
        assert len(obj_set.holdout) == 2  # extra 8 // 4 held-out bases


class TestTrainingArtifacts:
    def test_summary_contents(self, teacher_run):
        cfg, summary = teacher_run
        assert summary["run"] == "teacher"
        assert summary["iterations"] == cfg.iterations
        assert summary["env_steps"] == \
            cfg.iterations * cfg.n_envs * cfg.rollout_steps
        assert summary["config_hash"] == P.run_hash(cfg)
        assert summary["seed"] == cfg.seed
        on_disk = json.load(open(os.path.join(cfg.out_dir, "summary.json")))
        assert on_disk == json.loads(json.dumps(summary))

    def test_metrics_rows(self, teacher_run):
        cfg, _ = teacher_run
        rows = read_metrics(os.path.join(cfg.out_dir, "metrics.jsonl"))
        header, data = rows[0], rows[1:]
        assert header["kind"] == "header"
        assert header["config_hash"] == P.run_hash(cfg)
        its = [r["iteration"] for r in data]
        assert its == [2, 4, 6]  # every log_interval
        for r in data:
            assert r["env_steps"] == r["iteration"] * cfg.n_envs * cfg.rollout_steps
            for key in ("policy_loss", "value_loss", "approx_kl",
                        "clip_fraction", "gravity"):
                assert key in r

    def test_policy_checkpoint_roundtrip(self, teacher_run):
        cfg, _ = teacher_run
        actor, meta, cfg_hash = P.load_policy(
            os.path.join(cfg.out_dir, "policy.ckpt"))
        assert cfg_hash == P.run_hash(cfg)
        assert meta["net"]["arch"] == "mlp" and meta["net"]["obs"] == "full"
        obs = np.zeros((3, meta["net"]["obs_dim"]))
        prev = np.zeros((3, meta["net"]["act_dim"]))
        out = actor.forward(obs, prev)
        assert out.mean.shape == (3, meta["net"]["act_dim"])

    def test_train_state_checkpoint_kind(self, teacher_run):
        cfg, _ = teacher_run
        _, meta, _ = load_checkpoint(
            os.path.join(cfg.out_dir, "train_state.ckpt"))
        assert meta["kind"] == "train_state"
        assert meta["iteration"] == cfg.iterations
        assert "config_text" in meta


class TestDeterminism:
    def test_identical_rerun_is_byte_identical(self, tmp_path, obj_file):
        paths = []
        for sub in ("a", "b"):
            out = str(tmp_path / sub)
            cfg = P.RunConfig(run_name="twin", out_dir=out, seed=4,
                              objects=obj_file, **TINY)
            P.train(cfg)
            paths.append(out)
        m0 = open(os.path.join(paths[0], "metrics.jsonl"), "rb").read()
        m1 = open(os.path.join(paths[1], "metrics.jsonl"), "rb").read()
        assert m0 == m1
        p0 = open(os.path.join(paths[0], "policy.ckpt"), "rb").read()
        p1 = open(os.path.join(paths[1], "policy.ckpt"), "rb").read()
        assert p0 == p1

    @pytest.mark.parametrize("arch_kwargs", [
        dict(arch="mlp"),
        dict(arch="rnn", gru_size=4, scenario=E.HAND_DOWN_AIR,
             g_curriculum=True),
    ], ids=["mlp", "rnn_curriculum"])
    def test_resume_matches_uninterrupted(self, tmp_path, obj_file,
                                          arch_kwargs):
        kwargs = {**TINY, **arch_kwargs}
        full = P.RunConfig(run_name="r", out_dir=str(tmp_path / "full"),
                           seed=2, objects=obj_file, **kwargs)
        P.train(full)
        part = P.RunConfig(run_name="r", out_dir=str(tmp_path / "part"),
                           seed=2, objects=obj_file, **kwargs)
        interrupted = P.train(part, stop_after=3)
        assert interrupted == {"run": "r", "interrupted_at": 3}
        P.train(part, resume=True)
        for name in ("metrics.jsonl", "policy.ckpt"):
            a = open(os.path.join(full.out_dir, name), "rb").read()
            b = open(os.path.join(part.out_dir, name), "rb").read()
            assert a == b, name

    def test_resume_rejects_changed_experiment(self, tmp_path, obj_file):
        cfg = P.RunConfig(run_name="r", out_dir=str(tmp_path / "r"),
                          seed=2, objects=obj_file, **TINY)
        P.train(cfg, stop_after=2)
        changed = dataclasses.replace(cfg, gamma=0.5)
        with pytest.raises(CheckpointError):
            P.train(changed, resume=True)
        # the guard is a user error, so the CLI maps it to exit code 1
        assert issubclass(CheckpointError, ValueError)


class TestMissingArtifacts:
    def test_eval_without_checkpoint(self, obj_file):
        cfg = P.RunConfig(objects=obj_file, **TINY)
        with pytest.raises(P.MissingArtifactError,
                           match="no policy checkpoint was configured"):
            P.evaluate_policy(cfg)

    def test_eval_with_dangling_checkpoint(self, tmp_path, obj_file):
        cfg = P.RunConfig(objects=obj_file, out_dir=str(tmp_path),
                          checkpoint=str(tmp_path / "nope.ckpt"), **TINY)
        with pytest.raises(P.MissingArtifactError, match="not found"):
            P.evaluate_policy(cfg)

    def test_distill_without_teacher(self, obj_file):
        cfg = P.RunConfig(objects=obj_file, **TINY)
        with pytest.raises(P.MissingArtifactError, match="teacher checkpoint"):
            P.distill_student(cfg)

    def test_posebank_without_lift_policy(self, obj_file):
        cfg = P.RunConfig(objects=obj_file, **TINY)
        with pytest.raises(P.MissingArtifactError,
                           match="lift policy checkpoint"):
            P.build_posebank(cfg)

    def test_bank_init_without_bank(self, obj_file):
        cfg = P.RunConfig(objects=obj_file, init_mode=E.INIT_POSE_BANK, **TINY)
        with pytest.raises(P.MissingArtifactError, match="pose bank"):
            P._load_bank(cfg)

    def test_resume_without_state(self, tmp_path, obj_file):
        cfg = P.RunConfig(objects=obj_file, out_dir=str(tmp_path / "fresh"),
                          **TINY)
        with pytest.raises(P.MissingArtifactError,
                           match="training-state checkpoint"):
            P.train(cfg, resume=True)

    def test_missing_artifact_is_file_not_found(self):
        assert issubclass(P.MissingArtifactError, FileNotFoundError)


class TestEvaluation:
    def test_state_criterion_report(self, tmp_path, teacher_run, obj_file):
        cfg, _ = teacher_run
        ev = dataclasses.replace(
            cfg, out_dir=str(tmp_path / "ev"),
            checkpoint=os.path.join(cfg.out_dir, "policy.ckpt"))
        report, path = P.evaluate_policy(ev)
        assert os.path.basename(path) == "eval_report.json"
        assert 0.0 <= report.success_mean <= 1.0
        payload = json.load(open(path))
        assert payload["config_hash"] == P.run_hash(ev)
        assert payload["seed"] == ev.seed
        assert payload["criterion"] == "state"
        assert set(payload["per_object"]) == \
            {s.id for s in load_object_set(obj_file).train}

    def test_vision_criterion_report(self, tmp_path, teacher_run):
        cfg, _ = teacher_run
        ev = dataclasses.replace(
            cfg, out_dir=str(tmp_path / "ev"), criterion="vision",
            checkpoint=os.path.join(cfg.out_dir, "policy.ckpt"))
        report, path = P.evaluate_policy(ev)
        assert report.criterion == "vision"
        assert report.chamfer_stats is not None

    def test_cross_eval_report(self, tmp_path, teacher_run, foreign_file):
        cfg, _ = teacher_run
        ev = dataclasses.replace(
            cfg, out_dir=str(tmp_path / "xe"),
            checkpoint=os.path.join(cfg.out_dir, "policy.ckpt"))
        report, path = P.evaluate_policy(ev, cross_set=foreign_file)
        assert os.path.basename(path) == "xeval_report.json"
        assert report.train_set and report.test_set
        assert report.train_set != report.test_set


class TestAggregateReports:
    def _fake_report(self, path, mean, cfg_hash):
        payload = {"success_mean": mean, "success_std": 0.0,
                   "config_hash": cfg_hash, "seed": 0}
        with open(path, "w") as f:
            json.dump(payload, f)
        return str(path)

    def test_grand_stats(self, tmp_path):
        paths = [self._fake_report(tmp_path / f"r{i}.json", m, "h1")
                 for i, m in enumerate((0.5, 0.7))]
        merged = P.aggregate_reports(paths)
        assert merged["grand_mean"] == pytest.approx(0.6)
        assert merged["grand_std"] == pytest.approx(np.std([0.5, 0.7], ddof=1))
        assert merged["success_means"] == [0.5, 0.7]

    def test_single_report_std_is_zero(self, tmp_path):
        merged = P.aggregate_reports(
            [self._fake_report(tmp_path / "r.json", 0.4, "h1")])
        assert merged["grand_std"] == 0.0

    def test_refuses_mismatched_hashes(self, tmp_path):
        paths = [self._fake_report(tmp_path / "a.json", 0.5, "h1"),
                 self._fake_report(tmp_path / "b.json", 0.6, "h2")]
        with pytest.raises(ValueError, match="mismatched config hashes"):
            P.aggregate_reports(paths)
        merged = P.aggregate_reports(paths, force=True)
        assert merged["grand_mean"] == pytest.approx(0.55)


class TestFullChain:
    def test_lift_bank_downair_distill(self, tmp_path, obj_file):
        # lift policy -> pose bank -> bank-initialized curriculum teacher
        # -> recurrent student, all at toy scale
        lift = P.RunConfig(run_name="lift", out_dir=str(tmp_path / "lift"),
                           seed=1, objects=obj_file,
                           scenario=E.HAND_DOWN_TABLE, task=E.TASK_LIFT,
                           **TINY)
        P.train(lift)

        bank_cfg = dataclasses.replace(
            lift, out_dir=str(tmp_path / "bank"), bank_entries=3,
            bank_attempt_factor=4,
            checkpoint=os.path.join(lift.out_dir, "policy.ckpt"))
        bank_summary = P.build_posebank(bank_cfg)
        assert os.path.exists(bank_summary["bank"])
        specs = load_object_set(obj_file).train
        assert set(bank_summary["per_object"]) == {s.id for s in specs}
        assert len(E.PoseBank.load(bank_summary["bank"])) == \
            bank_summary["entries"]

        # a toy lift policy rarely harvests real grasps, so seed a small
        # synthetic bank for the bank-initialized phases below
        bank = E.PoseBank()
        rng = np.random.default_rng(0)
        for s in specs:
            for _ in range(3):
                q = rng.uniform(0.1, 0.5, size=s.n_joints)
                bank.add(s.id, q, np.array([1.0, 0, 0, 0]),
                         np.array([0.0, 0.0, -0.07]))
        bank_path = str(tmp_path / "bank" / "synthetic_bank.json")
        bank.save(bank_path)

        downair = P.RunConfig(
            run_name="downair", out_dir=str(tmp_path / "downair"), seed=1,
            objects=obj_file, scenario=E.HAND_DOWN_AIR,
            init_mode=E.INIT_POSE_BANK, pose_bank=bank_path,
            g_curriculum=True, **TINY)
        da_summary = P.train(downair)
        assert os.path.exists(da_summary["policy"])

        student = P.RunConfig(
            run_name="student", out_dir=str(tmp_path / "student"), seed=1,
            objects=obj_file, scenario=E.HAND_DOWN_AIR, arch="rnn",
            gru_size=4, init_mode=E.INIT_POSE_BANK, pose_bank=bank_path,
            teacher=da_summary["policy"], probe_episodes=2,
            report_interval=3, **{**TINY, "iterations": 3})
        st_summary = P.distill_student(student)
        actor, meta, _ = P.load_policy(st_summary["policy"])
        assert meta["net"]["obs"] == "reduced"
        assert meta["teacher"] == da_summary["policy"]
        rows = read_metrics(os.path.join(student.out_dir, "metrics.jsonl"))
        assert any("kl" in r for r in rows[1:])

    def test_distill_rejects_reduced_teacher(self, tmp_path, obj_file):
        # a reduced-observation policy cannot supervise distillation
        red = P.RunConfig(run_name="red", out_dir=str(tmp_path / "red"),
                          seed=1, objects=obj_file, obs="reduced",
                          **{**TINY, "iterations": 2})
        summary = P.train(red)
        cfg = P.RunConfig(objects=obj_file, out_dir=str(tmp_path / "st"),
                          teacher=summary["policy"], **TINY)
        with pytest.raises(ValueError, match="full observations"):
            P.distill_student(cfg)

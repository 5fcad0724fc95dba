from smn.experiments import AblationConfig, AblationResult, run_ablation


def test_wins_counts_shared_seeds():
    res = AblationResult(test_ade={("A", 0): 1.0, ("B", 0): 2.0, ("A", 1): 3.0, ("B", 1): 2.0, ("A", 2): 0.1})
    assert res.wins("A", "B") == 1 and res.wins("B", "A") == 1


def test_tiny_ablation_runs():
    lines = []
    cfg = AblationConfig(scenes=6, seeds=(0,), width=4, hidden=4, epochs=1, accum=4)
    res = run_ablation(cfg, report=lines.append)
    assert set(res.test_ade) == {("SHA", 0), ("SMN", 0), ("SMN_IR", 0)}
    assert all(v > 0 for v in res.test_ade.values())
    assert len(lines) == 3 and res.n_train > 0

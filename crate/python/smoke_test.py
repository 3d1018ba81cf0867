"""Smoke test for the `magnifier` extension module.

Build it first: `pip install --no-build-isolation -e crates/py` (needs maturin).
"""

import json
import pathlib

import magnifier

ROOT = pathlib.Path(__file__).resolve().parent.parent
EXAMPLE = ROOT / "crates" / "core" / "fixtures" / "example1.json"


def main():
    batch = json.loads(magnifier.generate_flight_plans(5, 0.5, 9, 3, seed=42))
    assert len(batch["plans"]) == 5, batch
    again = json.loads(magnifier.generate_flight_plans(5, 0.5, 9, 3, seed=42))
    assert batch == again

    report = json.loads(magnifier.verify_scenario(EXAMPLE.read_text()))
    assert report["verdict"]["verdict"] == "compatible", report["verdict"]
    assert len(report["final_scope"]) == 2

    mono = json.loads(magnifier.verify_scenario(EXAMPLE.read_text(), mode="monolithic"))
    assert mono["verdict"] == report["verdict"]

    scenario = {"schemaVersion": magnifier.SCHEMA_VERSION, "n": 6, "regionSize": 3, "m": 4, "stormTick": 3, "mode": "both"}
    rows = magnifier.bench_csv(json.dumps(scenario)).splitlines()
    assert rows[0].startswith("scenarioId,mode,verdict"), rows
    assert len(rows) == 3

    try:
        magnifier.verify_scenario('{"schemaVersion": 9}')
    except ValueError:
        pass
    else:
        raise AssertionError("bad scenario accepted")
    print("python smoke test ok")


if __name__ == "__main__":
    main()

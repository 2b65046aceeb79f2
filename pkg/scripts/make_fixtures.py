"""Regenerate the JSON fixtures under tests/fixtures."""
from pathlib import Path

from skelstat import ellipsoid_template, gp_to_lp, save_gp, save_lp, scale_lp, study_template

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    gp = ellipsoid_template(5, 9, (3.0, 2.0, 1.0), 20)
    save_gp(gp, OUT / "ellipsoid_5x9_gp.json")
    save_lp(scale_lp(gp_to_lp(gp)), OUT / "ellipsoid_5x9_lp_scaled.json")
    save_lp(study_template(), OUT / "study_template_lp.json")
    print(f"fixtures written to {OUT}")


if __name__ == "__main__":
    main()

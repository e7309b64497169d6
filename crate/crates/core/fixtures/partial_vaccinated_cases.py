"""Independent oracle for partial_vaccinated_cases.csv.

Picks every 11th complete row of vaccinations.csv (first 15) plus five
hand-built rows, and writes max(total - 2*fully, 0) with a clamp flag.
"""
import csv
from pathlib import Path

here = Path(__file__).parent
rows = list(csv.DictReader(open(here / "vaccinations.csv")))
picked = [
    (f"fixture:{r['location']}:{r['date']}", int(r["total_vaccinations"]), int(r["people_fully_vaccinated"]))
    for i, r in enumerate(rows)
    if i % 11 == 0 and r["total_vaccinations"] and r["people_fully_vaccinated"]
][:15]
hand = [
    ("handmade:single-dose-heavy", 1000, 600),
    ("handmade:equal", 1000, 500),
    ("handmade:zero", 0, 0),
    ("handmade:all-single", 250, 250),
    ("handmade:large", 123456789, 61000000),
]
with open(here / "partial_vaccinated_cases.csv", "w") as out:
    out.write("source,total_vaccinations,people_fully_vaccinated,expected_partial,clamped\n")
    for src, total, fully in picked + hand:
        raw = total - 2 * fully
        out.write(f"{src},{total},{fully},{max(raw, 0)},{str(raw < 0).lower()}\n")

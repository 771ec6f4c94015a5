"""Writes bladder1_raw.csv from the `bladder1` table of the R survival package.

The table is read through the `rdatasets` Python package (pip install
rdatasets). One row per recurrence interval:

  subject     id
  recurrence  enum
  stratum     1 placebo, 2 pyridoxine, 3 thiotepa
  time        stop - start, months
  status      raw code: 0 censored, 1 recurrence, 2 death (bladder cancer),
              3 death (other)
  number      tumour count at the start of the interval
  size        largest tumour size (cm) at the start of the interval

For the first interval the baseline `number`/`size` are used; for later
intervals the `rtumor`/`rsize` recorded at the recurrence that opened the
interval ("NA" when not recorded).
"""

import csv
import sys

import rdatasets

STRATA = {"placebo": 1, "pyridoxine": 2, "thiotepa": 3}


def value(x):
    x = str(x).strip()
    return "NA" if x in ("", ".", "nan", "NaN") else x


def main(out_path):
    d = rdatasets.data("survival", "bladder1").sort_values(["id", "enum"])
    prev = {}
    with open(out_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject", "recurrence", "stratum", "time", "status", "number", "size"])
        for row in d.itertuples(index=False):
            if row.enum == 1:
                number, size = value(row.number), value(row.size)
            else:
                number, size = prev[row.id]
            w.writerow([row.id, row.enum, STRATA[row.treatment], int(row.stop) - int(row.start),
                        int(row.status), number, size])
            prev[row.id] = (value(row.rtumor), value(row.rsize))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "bladder1_raw.csv")

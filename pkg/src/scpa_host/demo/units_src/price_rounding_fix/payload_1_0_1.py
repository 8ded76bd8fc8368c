"""Formats computed sales totals to whole cents.

Rounds half-up, fixing the truncation bug shipped in 1.0.0.
"""

from decimal import ROUND_HALF_UP, Decimal

CENT = Decimal("0.01")


def round_totals(payload, context):
    totals = payload.get("sales_totals")
    if not isinstance(totals, dict):
        return dict(payload)
    out = dict(payload)
    out["sales_totals"] = {
        pid: str(Decimal(total).quantize(CENT, rounding=ROUND_HALF_UP))
        for pid, total in totals.items()
    }
    return out

"""Formats computed sales totals to whole cents.

This version truncates toward zero, so fractional cents are dropped and
totals can under-report by up to one cent.
"""

from decimal import ROUND_DOWN, Decimal

CENT = Decimal("0.01")


def round_totals(payload, context):
    totals = payload.get("sales_totals")
    if not isinstance(totals, dict):
        return dict(payload)
    out = dict(payload)
    out["sales_totals"] = {
        pid: str(Decimal(total).quantize(CENT, rounding=ROUND_DOWN))
        for pid, total in totals.items()
    }
    return out

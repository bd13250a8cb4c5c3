#!/usr/bin/env python3
"""Writes transition_table.csv from the keypad rules in the controller docs.

Run from this directory: python3 gen_transition_table.py
"""
import csv
import itertools

MODES = ["IDLE", "JOG", "DANCE", "SCAN", "FLAP"]
ROUTINES = ["none", "dance", "scan"]
KEYS = [
    "MODE_IDLE", "MODE_JOG", "MODE_DANCE", "MODE_SCAN", "MODE_FLAP",
    "JOG_X_PLUS", "JOG_X_MINUS", "JOG_Y_PLUS", "JOG_Y_MINUS",
    "START", "STOP", "MOTION_TOGGLE",
]


def step(mode, enabled, routine, flapper, key):
    """Returns (accepted, mode, enabled, routine, flapper)."""
    busy = routine != "none"
    reject = (False, mode, enabled, routine, flapper)
    if key.startswith("MODE_"):
        if busy:
            return reject
        target = key[len("MODE_"):]
        return (True, target, enabled, routine, flapper and target == "FLAP")
    if key.startswith("JOG_"):
        if mode != "JOG" or not enabled or busy:
            return reject
        return (True, mode, enabled, routine, flapper)
    if key == "START":
        if mode in ("DANCE", "SCAN"):
            if busy or not enabled:
                return reject
            return (True, mode, enabled, mode.lower(), flapper)
        if mode == "FLAP":
            if flapper:
                return reject
            return (True, mode, enabled, routine, True)
        return reject
    if key == "STOP":
        return (True, mode, False, "none", False)
    if key == "MOTION_TOGGLE":
        if enabled:
            return (True, mode, False, "none", flapper and not busy)
        return (True, mode, True, routine, flapper)
    raise ValueError(key)


def b(v):
    return "1" if v else "0"


with open("transition_table.csv", "w", newline="") as f:
    w = csv.writer(f, lineterminator="\n")
    w.writerow([
        "mode", "motion_enabled", "routine", "flapper_on", "key",
        "result", "next_mode", "next_motion_enabled", "next_routine", "next_flapper_on",
    ])
    for mode, enabled, routine, flapper, key in itertools.product(
        MODES, [False, True], ROUTINES, [False, True], KEYS
    ):
        ok, m, e, r, fl = step(mode, enabled, routine, flapper, key)
        w.writerow([
            mode, b(enabled), routine, b(flapper), key,
            "accepted" if ok else "rejected", m, b(e), r, b(fl),
        ])

#!/usr/bin/env python3
"""Reference METEOR (exact-match variant) used to freeze expected values in
test_evaluation.cpp. Canonical constants: alpha=0.9, beta=3, gamma=0.5;
tokens are lowercased alphanumeric runs; alignment is the standard greedy
exact-match pass scanning both sides from the end, chunks counted over
matches sorted by candidate position.

Run: python3 meteor_reference.py
"""

import re


def tokens(text):
    return re.findall(r"[a-z0-9]+", text.lower())


def align(cand, ref):
    ref_used = [False] * len(ref)
    matches = []
    for i in range(len(cand) - 1, -1, -1):
        for j in range(len(ref) - 1, -1, -1):
            if not ref_used[j] and cand[i] == ref[j]:
                matches.append((i, j))
                ref_used[j] = True
                break
    return sorted(matches)


def count_chunks(matches):
    if not matches:
        return 0
    chunks = 1
    for prev, cur in zip(matches, matches[1:]):
        if not (cur[0] == prev[0] + 1 and cur[1] == prev[1] + 1):
            chunks += 1
    return chunks


def meteor(candidate, reference, alpha=0.9, beta=3.0, gamma=0.5):
    cand, ref = tokens(candidate), tokens(reference)
    if not cand or not ref:
        return 0.0
    matches = align(cand, ref)
    m = float(len(matches))
    if m == 0.0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    fmean = (precision * recall) / (alpha * precision + (1 - alpha) * recall)
    frag = count_chunks(matches) / m
    return (1.0 - gamma * frag ** beta) * fmean


PAIRS = [
    ("pneumonia", "pneumonia"),
    ("the patient was discharged home in stable condition",
     "the patient was discharged home in stable condition"),
    ("no relevant findings today", "acute appendicitis with perforation"),
    ("started on lisinopril for hypertension",
     "the patient was started on lisinopril to control hypertension"),
    ("azithromycin", "the patient received azithromycin for five days"),
    ("the chest xray showed a small left pleural effusion with no pneumothorax",
     "chest xray showed small left pleural effusion"),
    ("fever fever fever cough", "cough fever cough"),
    ("blood pressure was 120 over 80 mmhg", "bp 120/80 mmhg at discharge"),
    ("", "any reference"),
    ("Diagnosis: Type-2 Diabetes Mellitus!", "diagnosis type 2 diabetes mellitus"),
]

if __name__ == "__main__":
    for cand, ref in PAIRS:
        print(f"{meteor(cand, ref):.12f}  cand={cand!r} ref={ref!r}")

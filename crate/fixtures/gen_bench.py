"""Writes the synthetic benchmark fixtures and their construction manifest.

Every count and duration is fixed by the tables below, so the manifest is
known before any file is read back.
"""
import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))

VERBS = ["opens", "closes", "picks up", "puts down", "holds", "throws", "washes", "looks at"]
NOUNS = ["door", "cup", "book", "laptop", "towel", "phone", "shoe", "bag", "box", "pillow"]

# name -> (source, [(duration, annotations_for_video), ...])
BENCHES = {
    "charades_synth": ("charades", [(24.0, 3), (31.0, 2), (18.5, 3), (29.5, 2), (35.0, 3), (22.0, 2),
                                    (27.0, 3), (33.5, 2), (20.0, 2), (30.5, 3), (26.0, 2), (28.0, 3)]),
    "activitynet_synth": ("activitynet", [(62.0, 3), (118.0, 4), (95.5, 2), (180.0, 3), (143.0, 3),
                                          (210.5, 4), (77.0, 2), (160.0, 3), (133.5, 3), (88.0, 2),
                                          (199.0, 4), (104.0, 3), (121.0, 3), (241.0, 3)]),
    "qvhighlights_synth": ("qvhighlights", [(150.0, 1)] * 14 + [(150.0, 2)]),
}


def main():
    rng = random.Random(7)
    manifest = {}
    for name, (source, videos) in BENCHES.items():
        lines = []
        for vi, (duration, n_ann) in enumerate(videos):
            vid = f"{name[:3]}_v{vi:02d}"
            for ai in range(n_ann):
                start = round(rng.uniform(0, duration * 0.6), 1)
                end = round(min(duration, start + rng.uniform(2.0, duration * 0.35)), 1)
                query = f"person {VERBS[(vi + ai) % len(VERBS)]} the {NOUNS[(vi * 3 + ai) % len(NOUNS)]} ({vi}.{ai})"
                lines.append({
                    "video_id": vid,
                    "duration": duration,
                    "query": query,
                    "span": [start, end],
                    "annotation_id": f"{vid}_a{ai}",
                    "source": source,
                })
        with open(os.path.join(HERE, "bench", f"{name}.jsonl"), "w") as f:
            for rec in lines:
                f.write(json.dumps(rec) + "\n")
        manifest[name] = {
            "videos": len(videos),
            "annotations": sum(n for _, n in videos),
            "duration_sum": sum(d for d, _ in videos),
        }
    with open(os.path.join(HERE, "bench", "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


if __name__ == "__main__":
    main()

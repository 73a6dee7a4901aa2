#!/usr/bin/env python3
"""Walk through the screening metrics on small hand-checkable rankings.

Run: python3 demos/01_metrics_walkthrough.py
"""

from fractions import Fraction

from screenrank import (
    LabeledRanking,
    aggregate,
    average_precision,
    confusion_at_recall,
    evaluate_ranking,
    normalized_wss_at_recall,
    recall_at_percent,
    tnr_at_recall,
    wss_at_recall,
)


def show(title: str, value) -> None:
    print(f"  {title:<42} {value!s:>10}  ({float(value):.4f})")


def main() -> None:
    print("A ranked pool is reduced to its labels, best rank first.")
    print("Pool of 10, the 2 relevant papers ranked 1st and 4th:\n")
    ranking = LabeledRanking((1, 0, 0, 1, 0, 0, 0, 0, 0, 0))

    show("average precision", average_precision(ranking))
    show("recall after screening top 20%", recall_at_percent(ranking, 20))
    show("recall after screening top 50%", recall_at_percent(ranking, 50))

    print("\nTo reach 95% recall we need ceil(0.95 * 2) = 2 relevant papers;")
    print("the second one sits at rank 4, so 4 papers must be screened:\n")
    confusion = confusion_at_recall(ranking, Fraction(95, 100))
    print(f"  cutoff n={confusion.n}  TP={confusion.tp} FP={confusion.fp} "
          f"FN={confusion.fn} TN={confusion.tn}\n")

    show("work saved over sampling @95%", wss_at_recall(ranking, Fraction(95, 100)))
    show("true-negative rate @95%", tnr_at_recall(ranking, Fraction(95, 100)))
    show("min-max normalized WSS @95%", normalized_wss_at_recall(ranking, Fraction(95, 100)))
    print("\nThe last two always agree exactly; the normalization rescales WSS")
    print("by its best and worst achievable values for this pool.\n")

    print("Macro vs micro averaging over two pools of very different size:")
    pool_a = evaluate_ranking(LabeledRanking((1, 0)))             # 1 of 2 relevant
    pool_b = evaluate_ranking(LabeledRanking(tuple([1, 0] * 100)))  # 100 of 200
    report = aggregate({"small_review": pool_a, "large_review": pool_b}, mode="micro")
    show("macro R@50% (mean of per-review recalls)", report.macro["R@50%"])
    show("micro R@50% (pooled counts, Σ TP / Σ P)", report.micro_recall[50])
    print("\nMicro weights the large review 100x heavier; macro treats both equally.")


if __name__ == "__main__":
    main()

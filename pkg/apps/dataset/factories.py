"""
factory-boy factories for annotation fixtures used across app tests.
"""

import factory

from apps.dataset.annotations import StrokeAnnotation


class StrokeAnnotationFactory(factory.Factory):
    """Disjoint, increasing intervals: each new annotation starts after the previous one."""

    class Meta:
        model = StrokeAnnotation

    begin = factory.Sequence(lambda n: 200 * n + 10)
    end = factory.LazyAttribute(lambda o: o.begin + 60 + o.extra)
    label = factory.Faker("random_element", elements=["serve", "forehand", "backhand", "push"])
    score = None

    class Params:
        extra = factory.Faker("random_int", min=0, max=120)


def annotation_list(size, **kwargs):
    """A sorted, non-overlapping list of `size` annotations."""
    StrokeAnnotationFactory.reset_sequence()
    return StrokeAnnotationFactory.build_batch(size, **kwargs)

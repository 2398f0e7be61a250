"""Lifter-centered crop geometry.

The crop rule must agree exactly with the consumer's: expand the person
box by a fixed fraction of its own size per side, clamped to the image.
The consumer checks this parity against shared golden vectors, so the
rule is implemented here rather than imported.
"""

CROP_MARGIN_FRACTION = 0.10


def person_crop_rect(
    bbox,
    margin_fraction: float = CROP_MARGIN_FRACTION,
    image_width: int = 1280,
    image_height: int = 720,
) -> tuple:
    """Expanded, clamped crop rectangle around a person box."""
    x0, y0, x1, y1 = (float(v) for v in bbox)
    mx = (x1 - x0) * margin_fraction
    my = (y1 - y0) * margin_fraction
    return (
        max(0.0, x0 - mx),
        max(0.0, y0 - my),
        min(float(image_width), x1 + mx),
        min(float(image_height), y1 + my),
    )

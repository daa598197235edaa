"""Visual content formulation: find the objects worth searching for, caption
each one conditioned on the user's question, and rewrite every caption into a
correlation-aware description using the other objects as context."""

from __future__ import annotations

import io
from dataclasses import dataclass

from PIL import Image

from .gateway import ChatMessage, Gateway, ModelReply, ModelRole
from .model import (
    BoundingBox,
    CorrelatedFormulation,
    ImagePayload,
    QueryMode,
    RegionalCaption,
    RegionOfInterest,
    UserQuery,
)
from .templates import TemplateCatalog
from .trace import EventKind, TraceRecorder


@dataclass
class FormulationConfig:
    n_max: int = 5
    dedup_iou_threshold: float = 0.5
    confidence_floor: float = 0.35
    crop_pad_fraction: float = 0.10  # context padding applied to each box side


@dataclass(frozen=True)
class FormulationResult:
    regions: tuple[RegionOfInterest, ...]
    captions: tuple[RegionalCaption, ...]
    formulations: tuple[CorrelatedFormulation, ...]
    fallback_used: bool

    def __post_init__(self) -> None:
        if not (len(self.regions) == len(self.captions) == len(self.formulations) >= 1):
            raise ValueError("regions, captions, and formulations must align and be non-empty")


class FormulationError(Exception):
    pass


def _open_image(image: ImagePayload) -> Image.Image:
    try:
        return Image.open(io.BytesIO(image.data))
    except Exception as exc:
        raise FormulationError(f"undecodable image: {exc}") from exc


def _crop_payload(img: Image.Image, box: BoundingBox) -> ImagePayload:
    crop = img.crop((box.x_min, box.y_min, box.x_max, box.y_max))
    buffer = io.BytesIO()
    crop.save(buffer, format="PNG")
    return ImagePayload(buffer.getvalue(), "png")


def _pad_box(box: BoundingBox, width: int, height: int, fraction: float) -> BoundingBox:
    pad_x = round(box.width * fraction)
    pad_y = round(box.height * fraction)
    return BoundingBox(
        max(0, box.x_min - pad_x),
        max(0, box.y_min - pad_y),
        min(width, box.x_max + pad_x),
        min(height, box.y_max + pad_y),
        box.confidence,
    )


def full_image_region(image: ImagePayload) -> RegionOfInterest:
    img = _open_image(image)
    box = BoundingBox(0, 0, img.width, img.height, 1.0)
    return RegionOfInterest(region_index=0, box=box, crop=image, label="image")


class Formulator:
    def __init__(
        self,
        gateway: Gateway,
        templates: TemplateCatalog,
        config: FormulationConfig | None = None,
        recorder: TraceRecorder | None = None,
    ) -> None:
        self.gateway = gateway
        self.templates = templates
        self.config = config or FormulationConfig()
        self.recorder = recorder

    def _emit(self, kind: EventKind, payload: dict) -> None:
        if self.recorder is not None:
            self.recorder.emit(kind, payload)

    # -- detection --

    def _vocabulary(self, prompt_text: str) -> list[str]:
        prompt = self.templates.render("detector_vocabulary", prompt_text=prompt_text)
        reply = self.gateway.complete(
            ModelRole.LLM_PLANNER,
            (ChatMessage("user", prompt),),
            self.gateway.config.judgment_budget_tokens,
        )
        phrases = []
        if reply.ok:
            phrases = [line.strip() for line in reply.text.splitlines() if line.strip()]
        if "object" not in phrases:
            phrases.append("object")
        return phrases

    def detect_regions(self, image: ImagePayload, prompt_text: str) -> tuple[list[RegionOfInterest], bool]:
        """Detect, deduplicate, pad, and crop the regions of interest.

        Overlapping detections (IoU >= threshold) collapse onto the
        higher-confidence box; at most ``n_max`` regions survive. Zero
        detections fall back to one region covering the whole image.
        """
        img = _open_image(image)
        vocabulary = self._vocabulary(prompt_text)
        reply = self.gateway.detect(image, vocabulary, self.config.confidence_floor)

        kept: list[tuple[BoundingBox, str]] = []
        for box, label in zip(reply.boxes, reply.labels):
            if any(box.iou(existing) >= self.config.dedup_iou_threshold for existing, _ in kept):
                continue
            kept.append((box, label))
            if len(kept) == self.config.n_max:
                break

        if not kept:
            return [full_image_region(image)], True

        regions = []
        for index, (box, label) in enumerate(kept):
            padded = _pad_box(box, img.width, img.height, self.config.crop_pad_fraction)
            regions.append(
                RegionOfInterest(
                    region_index=index,
                    box=padded,
                    crop=_crop_payload(img, padded),
                    label=label or "object",
                )
            )
        return regions, False

    # -- captioning --

    def _complete_nonempty(self, role: ModelRole, messages: tuple[ChatMessage, ...], what: str) -> ModelReply:
        reply = self.gateway.complete(role, messages)
        if not reply.ok:
            raise FormulationError(f"{what} failed: {reply.text}")
        if not reply.text.strip():
            reply = self.gateway.complete(role, messages)
            if not reply.ok or not reply.text.strip():
                raise FormulationError(f"empty {what}")
        return reply

    def caption_region(self, region: RegionOfInterest, prompt_text: str) -> RegionalCaption:
        prompt = self.templates.render("region_caption", prompt_text=prompt_text)
        reply = self._complete_nonempty(
            ModelRole.VLM_CAPTIONER,
            (ChatMessage("user", prompt, images=(region.crop,)),),
            "caption",
        )
        return RegionalCaption(region_index=region.region_index, text=reply.text.strip())

    def correlate_region(
        self,
        target_index: int,
        captions: tuple[RegionalCaption, ...],
        region: RegionOfInterest,
    ) -> CorrelatedFormulation:
        """Describe one region with every other region's caption as context;
        own caption first, the rest in ascending region order."""
        own = next(c for c in captions if c.region_index == target_index)
        others = sorted(
            (c for c in captions if c.region_index != target_index),
            key=lambda c: c.region_index,
        )
        if others:
            prompt = self.templates.render(
                "correlate_region",
                own_caption=own.text,
                other_captions="\n".join(f"- {c.text}" for c in others),
            )
        else:
            prompt = self.templates.render("correlate_region_single", own_caption=own.text)
        reply = self._complete_nonempty(
            ModelRole.VLM_GENERATOR,
            (ChatMessage("user", prompt, images=(region.crop,)),),
            "correlated formulation",
        )
        return CorrelatedFormulation(
            region_index=target_index,
            text=reply.text.strip(),
            context_caption_indices=tuple(c.region_index for c in others),
        )

    # -- composition --

    def formulate_visual_content(self, query: UserQuery) -> FormulationResult:
        """Run detection, captioning, and correlation for one query.

        ``whole_image`` mode skips detection and treats the full image as the
        single region; ``no_correlation`` mode short-circuits every
        formulation to its plain regional caption.
        """
        if query.mode is QueryMode.WHOLE_IMAGE:
            regions, fallback = [full_image_region(query.image)], True
        else:
            regions, fallback = self.detect_regions(query.image, query.prompt_text)

        img = _open_image(query.image)
        self._emit(
            EventKind.REGIONS_DETECTED,
            {
                "image_width": img.width,
                "image_height": img.height,
                "fallback_used": fallback,
                "regions": [
                    {
                        "region_index": r.region_index,
                        "label": r.label,
                        "box": {
                            "x_min": r.box.x_min,
                            "y_min": r.box.y_min,
                            "x_max": r.box.x_max,
                            "y_max": r.box.y_max,
                            "confidence": round(r.box.confidence, 4),
                        },
                    }
                    for r in regions
                ],
            },
        )

        captions = []
        for region in regions:
            caption = self.caption_region(region, query.prompt_text)
            captions.append(caption)
            self._emit(
                EventKind.CAPTION_READY,
                {"region_index": caption.region_index, "text": caption.text},
            )
        captions = tuple(captions)

        formulations = []
        for region in regions:
            if query.mode is QueryMode.NO_CORRELATION:
                formulation = CorrelatedFormulation(
                    region_index=region.region_index,
                    text=captions[region.region_index].text,
                    context_caption_indices=(),
                )
            else:
                formulation = self.correlate_region(region.region_index, captions, region)
            formulations.append(formulation)
            self._emit(
                EventKind.FORMULATION_READY,
                {
                    "region_index": formulation.region_index,
                    "text": formulation.text,
                    "context_caption_indices": list(formulation.context_caption_indices),
                },
            )

        return FormulationResult(
            regions=tuple(regions),
            captions=captions,
            formulations=tuple(formulations),
            fallback_used=fallback,
        )

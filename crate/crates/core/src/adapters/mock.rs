//! Deterministic stand-ins for the real model backends.
//!
//! Every output is a pure function of the request: images are solid-color
//! PNGs and audio is a sine tone, both keyed on the 64-bit FNV-1a hash of
//! the prompt; text comes from the fixture table or a fixed fallback rule.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::{
    canonicalize, truncate_tokens, AdapterError, AdapterSet, AdapterSpec, Artifact, Capability, FixtureTable,
    GenRequest, ModelAdapter, TemplateKind, TextOutput, TextRequest, VisionRequest,
};

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
pub const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const IMAGE_SIDE: u32 = 256;
pub const AUDIO_SAMPLE_RATE: u32 = 16_000;
pub const AUDIO_AMPLITUDE: f64 = 0.5;
pub const EXPAND_SUFFIX: &str = " , richly detailed, evocative";

pub(crate) const DEFAULT_MOCKS: [(&str, Capability, &str); 5] = [
    ("mock-text", Capability::TextGen, "mock-text"),
    ("mock-img", Capability::ImageGen, "mock-img"),
    ("mock-audio", Capability::AudioGen, "mock-audio"),
    ("mock-vision", Capability::VisionDescribe, "mock-vision"),
    ("mock-expand", Capability::PromptExpand, "mock-expand"),
];

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Color of the mock image: the three most significant bytes of the hash.
pub fn mock_color(prompt: &str) -> [u8; 3] {
    let h = fnv1a64(prompt.as_bytes()).to_be_bytes();
    [h[0], h[1], h[2]]
}

pub fn mock_frequency_hz(prompt: &str) -> u32 {
    220 + (fnv1a64(prompt.as_bytes()) % 440) as u32
}

fn png_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    let mut crc = crc32fast::Hasher::new();
    crc.update(kind);
    crc.update(data);
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    out.extend_from_slice(&crc.finalize().to_be_bytes());
}

/// 256x256 8-bit RGB PNG filled with one color.
pub fn mock_png(prompt: &str) -> Vec<u8> {
    let [r, g, b] = mock_color(prompt);
    let side = IMAGE_SIDE as usize;
    let mut raw = Vec::with_capacity(side * (1 + side * 3));
    for _ in 0..side {
        raw.push(0);
        for _ in 0..side {
            raw.extend_from_slice(&[r, g, b]);
        }
    }
    let mut z = ZlibEncoder::new(Vec::new(), Compression::new(9));
    z.write_all(&raw).expect("in-memory write");
    let idat = z.finish().expect("in-memory write");

    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&IMAGE_SIDE.to_be_bytes());
    ihdr.extend_from_slice(&IMAGE_SIDE.to_be_bytes());
    ihdr.extend_from_slice(&[8, 2, 0, 0, 0]);

    let mut out = b"\x89PNG\r\n\x1a\n".to_vec();
    png_chunk(&mut out, b"IHDR", &ihdr);
    png_chunk(&mut out, b"IDAT", &idat);
    png_chunk(&mut out, b"IEND", &[]);
    out
}

/// One second of 16-bit mono 16 kHz sine at half amplitude, phase zero.
pub fn mock_wav(prompt: &str) -> Vec<u8> {
    let freq = f64::from(mock_frequency_hz(prompt));
    let n = AUDIO_SAMPLE_RATE as usize;
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&AUDIO_SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(AUDIO_SAMPLE_RATE * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for i in 0..n {
        let t = i as f64 / f64::from(AUDIO_SAMPLE_RATE);
        let v = (AUDIO_AMPLITUDE * f64::from(i16::MAX) * (2.0 * PI * freq * t).sin()).round();
        out.extend_from_slice(&(v as i16).to_le_bytes());
    }
    out
}

/// Fallback used when no fixture matches a text request.
pub fn fallback_text(req: &TextRequest) -> String {
    let first = req.inputs.first().map(String::as_str).unwrap_or("");
    match req.template {
        TemplateKind::Coherent => format!("Combined: {first}"),
        TemplateKind::Decompose => format!("Subject :: {}", canonicalize(first)),
        TemplateKind::SharedFeatures => {
            let joined = req.inputs.iter().skip(1).cloned().collect::<Vec<_>>().join(" ");
            let words: Vec<&str> = joined.split_whitespace().take(8).collect();
            format!("shared: {}", words.join(" "))
        }
        TemplateKind::Expand => format!("{first}{EXPAND_SUFFIX}"),
        TemplateKind::Freeform => req.prompt.clone(),
    }
}

pub fn fallback_vision(asset_id: &str, label: &str) -> String {
    let short: String = asset_id.chars().take(8).collect();
    format!("image {short} described for '{label}'")
}

pub struct MockAdapter {
    spec: AdapterSpec,
    fixtures: Arc<FixtureTable>,
}

impl MockAdapter {
    pub fn new(spec: AdapterSpec, fixtures: Arc<FixtureTable>) -> Self {
        Self { spec, fixtures }
    }

    fn require(&self, cap: Capability) -> Result<(), AdapterError> {
        if self.spec.provides.contains(&cap) {
            Ok(())
        } else {
            Err(AdapterError::Unsupported(cap))
        }
    }

    fn text(&self, req: &TextRequest) -> TextOutput {
        let raw = self
            .fixtures
            .lookup(req.template.as_str(), &req.inputs)
            .map(str::to_string)
            .unwrap_or_else(|| fallback_text(req));
        truncate_tokens(&raw, req.max_tokens)
    }
}

impl ModelAdapter for MockAdapter {
    fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    fn generate_text(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.require(Capability::TextGen)?;
        Ok(self.text(req))
    }

    fn expand_prompt(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.require(Capability::PromptExpand)?;
        Ok(self.text(req))
    }

    fn describe_image(&self, req: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        self.require(Capability::VisionDescribe)?;
        let inputs = [req.asset.id.clone(), req.label.to_string()];
        let raw = self
            .fixtures
            .lookup("vision", &inputs)
            .map(str::to_string)
            .unwrap_or_else(|| fallback_vision(&req.asset.id, req.label));
        Ok(truncate_tokens(&raw, req.max_tokens))
    }

    fn generate_image(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.require(Capability::ImageGen)?;
        Ok(Artifact {
            bytes: mock_png(&req.prompt),
            media_type: "image/png".to_string(),
        })
    }

    fn generate_audio(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.require(Capability::AudioGen)?;
        Ok(Artifact {
            bytes: mock_wav(&req.prompt),
            media_type: "audio/wav".to_string(),
        })
    }
}

/// Wraps another adapter and counts calls per capability. Used to probe
/// caching and interpret-once guarantees.
pub struct CountingAdapter {
    inner: Arc<dyn ModelAdapter>,
    calls: [AtomicUsize; 5],
}

impl CountingAdapter {
    pub fn new(inner: Arc<dyn ModelAdapter>) -> Self {
        Self {
            inner,
            calls: Default::default(),
        }
    }

    fn bump(&self, cap: Capability) {
        self.calls[cap as usize].fetch_add(1, Ordering::SeqCst);
    }

    pub fn calls(&self, cap: Capability) -> usize {
        self.calls[cap as usize].load(Ordering::SeqCst)
    }

    pub fn total(&self) -> usize {
        Capability::ALL.iter().map(|&c| self.calls(c)).sum()
    }

    /// Route every capability of `set` through a counter. Returns the
    /// counters keyed by capability.
    pub fn wrap_all(set: &mut AdapterSet) -> Vec<(Capability, Arc<CountingAdapter>)> {
        let mut out = Vec::new();
        for cap in Capability::ALL {
            if let Some(inner) = set.get(cap).cloned() {
                let counter = Arc::new(CountingAdapter::new(inner));
                set.route(cap, counter.clone());
                out.push((cap, counter));
            }
        }
        out
    }
}

impl ModelAdapter for CountingAdapter {
    fn spec(&self) -> &AdapterSpec {
        self.inner.spec()
    }

    fn generate_text(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.bump(Capability::TextGen);
        self.inner.generate_text(req)
    }

    fn expand_prompt(&self, req: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.bump(Capability::PromptExpand);
        self.inner.expand_prompt(req)
    }

    fn describe_image(&self, req: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        self.bump(Capability::VisionDescribe);
        self.inner.describe_image(req)
    }

    fn generate_image(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.bump(Capability::ImageGen);
        self.inner.generate_image(req)
    }

    fn generate_audio(&self, req: &GenRequest) -> Result<Artifact, AdapterError> {
        self.bump(Capability::AudioGen);
        self.inner.generate_audio(req)
    }
}

/// Always fails with the given message.
pub struct FailingAdapter {
    spec: AdapterSpec,
    message: String,
}

impl FailingAdapter {
    pub fn new(name: &str, provides: &[Capability], message: &str) -> Self {
        Self {
            spec: AdapterSpec {
                name: name.to_string(),
                provides: provides.iter().copied().collect(),
                model_name: name.to_string(),
            },
            message: message.to_string(),
        }
    }

    fn fail<T>(&self) -> Result<T, AdapterError> {
        Err(AdapterError::failure(&self.spec.name, self.message.clone()))
    }
}

impl ModelAdapter for FailingAdapter {
    fn spec(&self) -> &AdapterSpec {
        &self.spec
    }

    fn generate_text(&self, _: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.fail()
    }

    fn expand_prompt(&self, _: &TextRequest) -> Result<TextOutput, AdapterError> {
        self.fail()
    }

    fn describe_image(&self, _: &VisionRequest<'_>) -> Result<TextOutput, AdapterError> {
        self.fail()
    }

    fn generate_image(&self, _: &GenRequest) -> Result<Artifact, AdapterError> {
        self.fail()
    }

    fn generate_audio(&self, _: &GenRequest) -> Result<Artifact, AdapterError> {
        self.fail()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::AdapterSet;
    use crate::assets::AssetRef;

    /// Byte-at-a-time reference, written out independently of `fnv1a64`.
    fn fnv_oracle(s: &str) -> u64 {
        let mut h: u64 = 14695981039346656037;
        for b in s.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(1099511628211);
        }
        h
    }

    fn text_req(template: TemplateKind, inputs: &[&str], max_tokens: u32) -> TextRequest {
        TextRequest {
            template,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            prompt: "rendered".into(),
            max_tokens,
        }
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
        for s in ["landscape", "Style: Chinese traditional", "ü"] {
            assert_eq!(fnv1a64(s.as_bytes()), fnv_oracle(s));
        }
    }

    #[test]
    fn empty_prompt_color_is_offset_basis_bytes() {
        assert_eq!(mock_color(""), [0xcb, 0xf2, 0x9c]);
    }

    #[test]
    fn png_is_deterministic_and_decodable() {
        let a = mock_png("a red bird");
        assert_eq!(a, mock_png("a red bird"));
        let decoder = png::Decoder::new(std::io::Cursor::new(&a));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (256, 256));
        assert_eq!(info.color_type, png::ColorType::Rgb);
        let c = mock_color("a red bird");
        assert!(buf[..info.buffer_size()].chunks(3).all(|px| px == c));
    }

    #[test]
    fn one_char_difference_changes_hash() {
        assert_ne!(fnv1a64(b"a red bird"), fnv1a64(b"a red birds"));
        assert_ne!(mock_png("a red bird"), mock_png("a red birc"));
    }

    #[test]
    fn wav_header_fields() {
        let w = mock_wav("tone");
        let r = hound::WavReader::new(std::io::Cursor::new(&w)).unwrap();
        let spec = r.spec();
        assert_eq!(spec.sample_rate, 16_000);
        assert_eq!(spec.channels, 1);
        assert_eq!(spec.bits_per_sample, 16);
        assert_eq!(spec.sample_format, hound::SampleFormat::Int);
        assert_eq!(r.len(), 16_000);
        assert_eq!(w, mock_wav("tone"));
    }

    #[test]
    fn wav_dominant_frequency_matches_formula() {
        for prompt in ["tone", "birdsong at dawn", ""] {
            let w = mock_wav(prompt);
            let mut r = hound::WavReader::new(std::io::Cursor::new(&w)).unwrap();
            let samples: Vec<f64> = r.samples::<i16>().map(|s| s.unwrap() as f64).collect();
            // Goertzel-style single-bin DFT magnitude at every integer frequency.
            let n = samples.len() as f64;
            let mut best = (0u32, 0.0f64);
            for f in 200..=700u32 {
                let w = 2.0 * std::f64::consts::PI * f as f64 / n;
                let (mut re, mut im) = (0.0, 0.0);
                for (i, s) in samples.iter().enumerate() {
                    re += s * (w * i as f64).cos();
                    im -= s * (w * i as f64).sin();
                }
                let mag = re * re + im * im;
                if mag > best.1 {
                    best = (f, mag);
                }
            }
            let expected = 220 + (fnv_oracle(prompt) % 440) as u32;
            assert!(best.0.abs_diff(expected) <= 1, "{prompt}: {} vs {expected}", best.0);
        }
    }

    #[test]
    fn decompose_fallback() {
        let set = AdapterSet::mock(FixtureTable::default());
        let out = set
            .generate_text(&text_req(TemplateKind::Decompose, &["a red bird"], 256))
            .unwrap();
        assert_eq!(out.text, "Subject :: a red bird");
    }

    #[test]
    fn decomposition_fixture_hit() {
        let set = AdapterSet::walkthrough();
        let out = set
            .generate_text(&text_req(
                TemplateKind::Decompose,
                &["Chinese style landscape, with traditional pavilion, soft and diffuse light"],
                256,
            ))
            .unwrap();
        assert_eq!(out.text.lines().count(), 5);
        assert!(out.text.starts_with("Style :: Chinese traditional"));
    }

    #[test]
    fn max_tokens_one_truncates() {
        let set = AdapterSet::mock(FixtureTable::default());
        let out = set
            .generate_text(&text_req(TemplateKind::Coherent, &["Subject: landscape"], 1))
            .unwrap();
        assert_eq!(out, TextOutput { text: "Combined:".into(), truncated: true });
    }

    #[test]
    fn shared_features_fallback_takes_eight_words() {
        let set = AdapterSet::mock(FixtureTable::default());
        let out = set
            .generate_text(&text_req(
                TemplateKind::SharedFeatures,
                &["sun", "one two three four five", "six seven eight nine ten"],
                256,
            ))
            .unwrap();
        assert_eq!(out.text, "shared: one two three four five six seven eight");
    }

    #[test]
    fn expand_fallback() {
        let set = AdapterSet::mock(FixtureTable::default());
        let out = set
            .expand_prompt(&text_req(TemplateKind::Expand, &["X"], 256))
            .unwrap();
        assert_eq!(out.text, "X , richly detailed, evocative");
    }

    #[test]
    fn vision_fallback_and_empty_label() {
        let set = AdapterSet::mock(FixtureTable::default());
        let asset = AssetRef {
            id: "0123456789abcdef".repeat(4),
            media_type: "image/png".into(),
            byte_length: 1,
        };
        let req = VisionRequest { asset: &asset, bytes: &[], label: "", max_tokens: 256 };
        assert_eq!(
            set.describe_image(&req).unwrap().text,
            "image 01234567 described for ''"
        );
        let req = VisionRequest { asset: &asset, bytes: &[], label: "trees", max_tokens: 256 };
        assert_eq!(
            set.describe_image(&req).unwrap().text,
            "image 01234567 described for 'trees'"
        );
    }

    #[test]
    fn mock_rejects_capabilities_it_does_not_provide() {
        let only_text = MockAdapter::new(
            AdapterSpec {
                name: "t".into(),
                provides: [Capability::TextGen].into_iter().collect(),
                model_name: "t".into(),
            },
            Arc::new(FixtureTable::default()),
        );
        let req = GenRequest { prompt: "p".into(), seed: 0, sample_index: 0 };
        assert_eq!(
            only_text.generate_image(&req),
            Err(AdapterError::Unsupported(Capability::ImageGen))
        );
    }

    proptest::proptest! {
        #[test]
        fn mocks_are_pure(prompt in ".{0,40}", label in "[a-z ]{0,10}", max in 0u32..20) {
            let set = AdapterSet::walkthrough();
            let r = text_req(TemplateKind::Coherent, &[prompt.as_str()], max);
            proptest::prop_assert_eq!(set.generate_text(&r).unwrap(), set.generate_text(&r).unwrap());
            let g = GenRequest { prompt: prompt.clone(), seed: 1, sample_index: 0 };
            proptest::prop_assert_eq!(set.generate_image(&g).unwrap(), set.generate_image(&g).unwrap());
            let asset = AssetRef { id: crate::assets::sha256_hex(prompt.as_bytes()), media_type: "image/png".into(), byte_length: 0 };
            let v = VisionRequest { asset: &asset, bytes: &[], label: &label, max_tokens: max };
            proptest::prop_assert_eq!(set.describe_image(&v).unwrap(), set.describe_image(&v).unwrap());
        }
    }
}

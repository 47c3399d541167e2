//! Media type detection for dropped files.

use crate::canvas::Modality;

/// How an uploaded file becomes a card.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sniffed {
    Text(String),
    Media { modality: Modality, media_type: &'static str },
}

fn by_magic(bytes: &[u8]) -> Option<(Modality, &'static str)> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some((Modality::Image, "image/png"))
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some((Modality::Image, "image/jpeg"))
    } else if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
        Some((Modality::Audio, "audio/wav"))
    } else if bytes.starts_with(b"ID3") || (bytes.len() >= 2 && bytes[0] == 0xFF && bytes[1] & 0xE0 == 0xE0) {
        Some((Modality::Audio, "audio/mpeg"))
    } else {
        None
    }
}

fn extension(file_name: &str) -> String {
    match file_name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
        _ => String::new(),
    }
}

/// Classify by magic bytes, falling back to the extension for plain text.
/// `None` means the type is unsupported.
pub fn sniff(bytes: &[u8], file_name: &str) -> Option<Sniffed> {
    if let Some((modality, media_type)) = by_magic(bytes) {
        return Some(Sniffed::Media { modality, media_type });
    }
    match extension(file_name).as_str() {
        "txt" | "text" | "md" => {
            let text = std::str::from_utf8(bytes).ok()?;
            if text.contains('\0') {
                return None;
            }
            Some(Sniffed::Text(text.to_string()))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn magic_bytes_win_over_extension() {
        let png = crate::adapters::mock::mock_png("x");
        assert_eq!(
            sniff(&png, "photo.txt"),
            Some(Sniffed::Media { modality: Modality::Image, media_type: "image/png" })
        );
        let wav = crate::adapters::mock::mock_wav("x");
        assert_eq!(
            sniff(&wav, "a.bin"),
            Some(Sniffed::Media { modality: Modality::Audio, media_type: "audio/wav" })
        );
        assert!(matches!(sniff(b"\xFF\xD8\xFF\xE0rest", "p.jpg"), Some(Sniffed::Media { media_type: "image/jpeg", .. })));
        assert!(matches!(sniff(b"ID3\x04rest", "s.mp3"), Some(Sniffed::Media { media_type: "audio/mpeg", .. })));
    }

    #[test]
    fn text_and_unsupported() {
        assert_eq!(sniff(b"hello\nworld", "notes.TXT"), Some(Sniffed::Text("hello\nworld".into())));
        assert_eq!(sniff(b"\x00\x01\x02", "data.xyz"), None);
        assert_eq!(sniff(b"plain", "noext"), None);
        assert_eq!(sniff(b"\xC3\x28", "bad.txt"), None);
    }
}

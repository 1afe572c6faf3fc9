//! Reserved marker tokens shared by every stage of the pipeline.

pub const PAD: &str = "<PAD>";
pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const UNK: &str = "<UNK>";
pub const USR: &str = "<USR>";
pub const SYS: &str = "<SYS>";
pub const DTA: &str = "<DTA>";

/// Reserved tokens in id order: `<PAD>` is 0, `<DTA>` is 6.
pub const RESERVED: [&str; 7] = [PAD, BOS, EOS, UNK, USR, SYS, DTA];

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const USR_ID: u32 = 4;
pub const SYS_ID: u32 = 5;
pub const DTA_ID: u32 = 6;

/// Reserved markers are matched case-insensitively since corpus text is lowercased on load.
pub fn is_reserved(token: &str) -> bool {
    RESERVED.iter().any(|r| r.eq_ignore_ascii_case(token))
}

/// Lowercases and splits already-tokenized text on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

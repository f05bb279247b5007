//! PAM4 framing of fixed-point gradient words.
//!
//! ```text
//! cargo run --example codec
//! ```

use optinc::codec::{
    decode_pam4, encode_pam4, real_to_word, snap_to_grid, word_to_real, AnalogFrame, FixedPointScale, Quantizer,
    SystemConfig,
};

fn main() -> optinc::Result<()> {
    let cfg = SystemConfig::new(8, 4, 4, Quantizer::Floor)?;
    let scale = FixedPointScale::symmetric(0.05)?;

    for g in [-0.05, -0.0123, 0.0, 0.0311, 0.05] {
        let word = real_to_word(g, &scale, &cfg);
        let frame = encode_pam4(word, &cfg)?;
        let back = word_to_real(decode_pam4(&frame, &cfg)?, &scale, &cfg);
        println!("{g:+.4} -> code {:3} -> symbols {:?} -> {back:+.5}", word.code(), frame.symbols());
    }

    // Received amplitudes are snapped to the nearest level before decoding.
    let noisy = AnalogFrame::new(vec![0.1, 2.45, 2.5, 3.7]);
    let snapped = snap_to_grid(&noisy, &cfg)?;
    println!("analog {:?} snaps to {:?} = code {}", noisy.levels, snapped.frame.symbols(), decode_pam4(&snapped.frame, &cfg)?.code());
    Ok(())
}

//! Monte Carlo 16-QAM symbol error rate over AWGN, Rayleigh and Rician
//! fading, next to the AWGN closed form.

use semcom::channel::{ser_sweep, ChannelFamily};
use statrs::function::erf::erfc;

fn awgn_ser(snr_db: f64) -> f64 {
    let es_n0 = 10f64.powf(snr_db / 10.0);
    let p = 1.5 * 0.5 * erfc((es_n0 / 10.0).sqrt());
    1.0 - (1.0 - p) * (1.0 - p)
}

fn main() -> semcom::Result<()> {
    let snr = [0.0, 4.0, 8.0, 12.0, 16.0];
    let symbols = 200_000;
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10}",
        "snr_db", "closed", "awgn", "rayleigh", "rician4"
    );
    let awgn = ser_sweep(ChannelFamily::Awgn, 0.0, &snr, symbols, 7)?;
    let rayleigh = ser_sweep(ChannelFamily::Rayleigh, 0.0, &snr, symbols, 7)?;
    let rician = ser_sweep(ChannelFamily::Rician, 4.0, &snr, symbols, 7)?;
    for i in 0..snr.len() {
        println!(
            "{:>6} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            snr[i],
            awgn_ser(snr[i]),
            awgn[i].ser,
            rayleigh[i].ser,
            rician[i].ser
        );
    }
    println!("\nindex error rate (two symbols per 8-bit index), Rayleigh:");
    for p in &rayleigh {
        println!("  {:>4} dB  {:.4}", p.snr_db, p.index_error_rate);
    }
    Ok(())
}

use semcom::channel::qam::{constellation, demap_symbol, map_symbol};

const FIXTURE: &str = include_str!("../fixtures/qam16_constellation.csv");

fn fixture() -> Vec<(u8, f64, f64)> {
    let mut r = csv::Reader::from_reader(FIXTURE.as_bytes());
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["bits", "in_phase", "quadrature"]
    );
    r.records()
        .map(|rec| {
            let rec = rec.unwrap();
            let label = u8::from_str_radix(&rec[0], 2).unwrap();
            (label, rec[1].parse().unwrap(), rec[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn matches_fixture_bit_for_bit() {
    let rows = fixture();
    assert_eq!(rows.len(), 16);
    for ((label, re, im), (l, p)) in rows.into_iter().zip(constellation()) {
        assert_eq!(label, l);
        assert_eq!(re.to_bits(), p.re.to_bits(), "label {label:04b}");
        assert_eq!(im.to_bits(), p.im.to_bits(), "label {label:04b}");
    }
}

#[test]
fn unit_mean_energy() {
    let e: f64 = constellation().iter().map(|(_, p)| p.norm_sqr()).sum::<f64>() / 16.0;
    assert!((e - 1.0).abs() < 1e-12, "{e}");
}

#[test]
fn nearest_neighbours_differ_in_one_bit() {
    let pts = constellation();
    let step = 2.0 / 10f64.sqrt();
    for (a, pa) in &pts {
        for (b, pb) in &pts {
            if ((pa - pb).norm() - step).abs() < 1e-9 {
                assert_eq!((a ^ b).count_ones(), 1, "{a:04b} vs {b:04b}");
            }
        }
    }
}

#[test]
fn demap_inverts_map() {
    for (label, p) in constellation() {
        let bits = demap_symbol(p);
        let back = bits.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b));
        assert_eq!(back, label);
        assert_eq!(map_symbol(bits), p);
    }
}

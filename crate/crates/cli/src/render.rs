use mvnet::training::Metrics;

/// Colours for classes 1..=16; higher classes wrap around. Class 0 is black.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn color(class: u16) -> [u8; 3] {
    if class == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(class as usize - 1) % PALETTE.len()]
    }
}

/// Binary PPM (P6) of a row-major class map.
pub fn ppm(map: &[u16], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(map.len() * 3);
    for &c in map {
        out.extend_from_slice(&color(c));
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One row per class (recall in percent, blank when the class has no samples)
/// followed by OA, AA and K rows.
pub fn metrics_csv(m: &Metrics, names: &[String]) -> String {
    let c = &m.confusion;
    let mut s = String::from("row,name,samples,value\n");
    for (i, r) in m.per_class.iter().enumerate() {
        let name = names.get(i).map(String::as_str).unwrap_or("");
        let value = r.map(pct).unwrap_or_default();
        s.push_str(&format!("{},{},{},{value}\n", i + 1, field(name), c.row_sum(i)));
    }
    let n = c.total();
    s.push_str(&format!("OA,overall accuracy,{n},{}\n", pct(m.oa)));
    s.push_str(&format!("AA,average accuracy,{n},{}\n", pct(m.aa)));
    s.push_str(&format!("K,kappa,{n},{}\n", pct(m.kappa)));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use mvnet::training::{compute_metrics, Confusion};

    #[test]
    fn ppm_header_and_colours() {
        let p = ppm(&[0, 1, 17, 2], 2, 2);
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&p[..header.len()], header);
        let px = &p[header.len()..];
        assert_eq!(px.len(), 12);
        assert_eq!(&px[0..3], &[0, 0, 0]);
        assert_eq!(&px[3..6], &PALETTE[0]);
        assert_eq!(&px[6..9], &PALETTE[0]);
        assert_eq!(&px[9..12], &PALETTE[1]);
    }

    #[test]
    fn palette_is_distinct() {
        for i in 0..16 {
            for j in i + 1..16 {
                assert_ne!(PALETTE[i], PALETTE[j]);
            }
            assert_ne!(PALETTE[i], [0, 0, 0]);
        }
    }

    #[test]
    fn metrics_table() {
        let m = compute_metrics(&Confusion::from_rows(&[vec![40, 10, 0], vec![20, 30, 0], vec![0, 0, 0]]).unwrap()).unwrap();
        let names = vec!["Corn, notill".to_string(), "Grass".into(), "Oats".into()];
        assert_eq!(
            metrics_csv(&m, &names),
            "row,name,samples,value\n\
             1,\"Corn, notill\",50,80.00\n\
             2,Grass,50,60.00\n\
             3,Oats,0,\n\
             OA,overall accuracy,100,70.00\n\
             AA,average accuracy,100,70.00\n\
             K,kappa,100,40.00\n"
        );
    }
}

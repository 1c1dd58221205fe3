use std::fmt::Write as _;
use std::io;

/// Uniformly sampled signals with a shoot-through annotation channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    /// Sample period, s.
    pub dt: f64,
    /// Time of the first sample, s.
    pub t0: f64,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub st: Vec<bool>,
}

impl Trace {
    pub fn new(dt: f64, t0: f64, names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        Self {
            dt,
            t0,
            names,
            columns,
            st: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.st.len()
    }

    pub fn is_empty(&self) -> bool {
        self.st.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn push(&mut self, values: &[f64], st: bool) {
        debug_assert_eq!(values.len(), self.columns.len());
        for (col, v) in self.columns.iter_mut().zip(values) {
            col.push(*v);
        }
        self.st.push(st);
    }

    /// Samples `start..` as a new trace.
    pub fn tail(&self, start: usize) -> Trace {
        let start = start.min(self.len());
        Trace {
            dt: self.dt,
            t0: self.time(start),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..].to_vec()).collect(),
            st: self.st[start..].to_vec(),
        }
    }

    /// CSV with header `t,<signal>...,st`; shortest round-trip float text.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push_str(",st\n");
        for i in 0..self.len() {
            let _ = write!(out, "{}", self.time(i));
            for col in &self.columns {
                let _ = write!(out, ",{}", col[i]);
            }
            out.push_str(if self.st[i] { ",1\n" } else { ",0\n" });
        }
        out
    }

    pub fn write_csv<W: io::Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_values() {
        let mut t = Trace::new(0.5, 0.0, vec!["v(a)".into(), "i(r1)".into()]);
        t.push(&[1.0 / 3.0, -2.5e-9], false);
        t.push(&[0.1 + 0.2, 7.0], true);
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,v(a),i(r1),st");
        let fields: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.0, 1.0 / 3.0, -2.5e-9, 0.0]);
        assert!(lines[2].starts_with("0.5,0.30000000000000004,7,1"));
        assert!(!csv.contains('\r'));
        assert_eq!(t.tail(1).column("i(r1)"), Some(&[7.0][..]));
    }
}

//! Trading-day arithmetic over an explicit session list.
//!
//! A [`TradingCalendar`] is built from the dates actually present in the
//! loaded price data. Date arithmetic that runs past the end of the data
//! (option expiries near the final bar) extrapolates with consecutive
//! weekdays, so results are identical whether or not later bars happen to
//! be loaded, as long as the real session list is itself weekday-spaced.

use chrono::{Datelike, Days, NaiveDate, Weekday};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct TradingCalendar {
    dates: Vec<NaiveDate>,
}

fn is_weekday(d: NaiveDate) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
}

fn next_weekday(mut d: NaiveDate) -> NaiveDate {
    loop {
        d = d
            .checked_add_days(Days::new(1))
            .expect("date overflow stepping to next weekday");
        if is_weekday(d) {
            return d;
        }
    }
}

impl TradingCalendar {
    /// Builds a calendar from strictly increasing session dates.
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if dates.is_empty() {
            return Err(Error::Config("calendar requires at least one date".into()));
        }
        for w in dates.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Ordering {
                    date: w[1],
                    msg: "calendar dates must be strictly increasing".into(),
                });
            }
        }
        Ok(Self { dates })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn first(&self) -> NaiveDate {
        self.dates[0]
    }

    pub fn last(&self) -> NaiveDate {
        *self.dates.last().expect("calendar is non-empty")
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.dates.binary_search(&date).is_ok()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    pub fn date_at(&self, index: usize) -> Option<NaiveDate> {
        self.dates.get(index).copied()
    }

    /// Virtual session index: positions inside the data use the session
    /// list, positions past the end count extrapolated weekdays. Dates
    /// before the first session or skipped inside the list are errors.
    fn virtual_index(&self, date: NaiveDate) -> Result<i64> {
        if date < self.first() {
            return Err(Error::Data {
                date,
                msg: "date precedes the calendar".into(),
            });
        }
        if date <= self.last() {
            return self
                .dates
                .binary_search(&date)
                .map(|i| i as i64)
                .map_err(|_| Error::Data {
                    date,
                    msg: "date is not a trading session".into(),
                });
        }
        let mut d = self.last();
        let mut idx = (self.dates.len() - 1) as i64;
        while d < date {
            d = next_weekday(d);
            idx += 1;
        }
        if d != date {
            return Err(Error::Data {
                date,
                msg: "date is not a weekday session".into(),
            });
        }
        Ok(idx)
    }

    /// The session `n` trading days after `date`, extrapolating weekdays
    /// past the end of the data.
    pub fn add_trading_days(&self, date: NaiveDate, n: usize) -> Result<NaiveDate> {
        let start = self.virtual_index(date)?;
        let target = start + n as i64;
        if (target as usize) < self.dates.len() {
            return Ok(self.dates[target as usize]);
        }
        // Walk weekdays forward from the later of `date` and the last session.
        let (mut d, mut idx) = if date > self.last() {
            (date, start)
        } else {
            (self.last(), self.dates.len() as i64 - 1)
        };
        while idx < target {
            d = next_weekday(d);
            idx += 1;
        }
        Ok(d)
    }

    /// Trading days from `a` to `b` (`b >= a`), counting sessions stepped.
    pub fn trading_days_between(&self, a: NaiveDate, b: NaiveDate) -> Result<usize> {
        let ia = self.virtual_index(a)?;
        let ib = self.virtual_index(b)?;
        if ib < ia {
            return Err(Error::Ordering {
                date: b,
                msg: "end date precedes start date".into(),
            });
        }
        Ok((ib - ia) as usize)
    }

    /// Consecutive weekdays starting at `start` (inclusive if a weekday,
    /// else the next weekday), used for synthetic data generation.
    pub fn synthetic(start: NaiveDate, days: usize) -> Self {
        let mut dates = Vec::with_capacity(days);
        let mut d = if is_weekday(start) {
            start
        } else {
            next_weekday(start)
        };
        for _ in 0..days {
            dates.push(d);
            d = next_weekday(d);
        }
        Self { dates }
    }
}
